//! Safety-data-sheet tools: a text "PDF" reader and a rule-based ingredient
//! extractor over the fixture layout (`SECTION n` headers, labeled fields).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::mirror::{ParamKind, Parameter, Tool, ToolDescriptor, ToolError};
use crate::value::{ArgumentTree, StoredValue};

pub const TIKA_TOOL: &str = "tika";
pub const EXTRACT_TOOL: &str = "extract_sds";
pub const DEFAULT_DOCUMENT_NAME: &str = "sds.pdf";
pub const DEFAULT_DOCUMENT_CHARS: usize = 30_000;

/// The titanium dioxide sheet served as `sds.pdf` by default.
pub const TITANIUM_FIXTURE: &str = include_str!("../../fixtures/sds/titanium_dioxide.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdsError {
    #[error("FileNotFound: {0}")]
    FileNotFound(String),
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingredient {
    pub name: String,
    pub cas_rn: String,
    pub concentration: String,
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdsSummary {
    pub product_name: String,
    pub ingredients: Vec<Ingredient>,
}

impl SdsSummary {
    pub fn to_value(&self) -> StoredValue {
        let ingredients = self
            .ingredients
            .iter()
            .map(|i| {
                [
                    ("name", &i.name),
                    ("cas_rn", &i.cas_rn),
                    ("concentration", &i.concentration),
                    ("formula", &i.formula),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), StoredValue::text(v.as_str())))
                .collect()
            })
            .collect();
        [
            ("product_name".to_owned(), StoredValue::text(self.product_name.as_str())),
            ("ingredients".to_owned(), StoredValue::Array(ingredients)),
        ]
        .into_iter()
        .collect()
    }
}

fn section_number(line: &str) -> Option<u32> {
    let rest = line.trim_start().strip_prefix("SECTION")?;
    let digits: String = rest.trim_start().chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

fn field<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    line.trim().strip_prefix(label).map(str::trim)
}

/// Extracts the product name (section 1) and ingredient blocks (section 3).
pub fn extract_sds(content: &str) -> Result<SdsSummary, SdsError> {
    let mut section = None;
    let mut saw_composition = false;
    let mut product_name = None;
    let mut ingredients: Vec<Ingredient> = Vec::new();

    for line in content.lines() {
        if let Some(n) = section_number(line) {
            section = Some(n);
            saw_composition |= n == 3;
            continue;
        }
        match section {
            Some(1) => {
                if let Some(name) = field(line, "Product name:") {
                    product_name.get_or_insert_with(|| name.to_owned());
                }
            }
            Some(3) => {
                if let Some(name) = field(line, "Component:") {
                    ingredients.push(Ingredient {
                        name: name.to_owned(),
                        cas_rn: String::new(),
                        concentration: String::new(),
                        formula: String::new(),
                    });
                } else if let Some(current) = ingredients.last_mut() {
                    if let Some(v) = field(line, "CAS-No.:") {
                        current.cas_rn = v.to_owned();
                    } else if let Some(v) = field(line, "Formula:") {
                        current.formula = v.to_owned();
                    } else if let Some(v) = field(line, "Concentration:") {
                        current.concentration = v.to_owned();
                    }
                }
            }
            _ => {}
        }
    }

    let product_name = product_name
        .filter(|n| !n.is_empty())
        .ok_or_else(|| SdsError::MalformedDocument("no product name in section 1".into()))?;
    if !saw_composition {
        return Err(SdsError::MalformedDocument("missing section 3".into()));
    }
    Ok(SdsSummary {
        product_name,
        ingredients,
    })
}

/// Pads `text` with revision-history lines to exactly `chars` characters.
/// Longer texts are returned unchanged.
pub fn pad_document(text: &str, chars: usize) -> String {
    let mut out = text.to_owned();
    let mut len = out.chars().count();
    if len >= chars {
        return out;
    }
    if !out.ends_with('\n') {
        out.push('\n');
        len += 1;
    }
    let mut i = 1;
    while len < chars {
        let line =
            format!("Revision history entry {i}: editorial update, no change to classification or composition.\n");
        len += line.chars().count();
        out.push_str(&line);
        i += 1;
    }
    if let Some((cut, _)) = out.char_indices().nth(chars) {
        out.truncate(cut);
    }
    out
}

/// Reads "PDF" files as text: first from an in-memory table, then from disk
/// relative to `root`.
pub struct TikaTool {
    descriptor: ToolDescriptor,
    documents: BTreeMap<String, String>,
    root: Option<PathBuf>,
}

impl TikaTool {
    pub fn new(documents: BTreeMap<String, String>, root: Option<PathBuf>) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                TIKA_TOOL,
                "Extracts the text content of a PDF file given its path.",
                vec![Parameter::required(
                    "pdf_path",
                    ParamKind::String,
                    "Path to the PDF file.",
                )],
            ),
            documents,
            root,
        }
    }

    pub fn read(&self, pdf_path: &str) -> Result<String, SdsError> {
        if let Some(text) = self.documents.get(pdf_path) {
            return Ok(text.clone());
        }
        let path = match &self.root {
            Some(root) => root.join(pdf_path),
            None => PathBuf::from(pdf_path),
        };
        fs::read_to_string(&path).map_err(|_| SdsError::FileNotFound(pdf_path.to_owned()))
    }
}

impl Tool for TikaTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        let path = args
            .get("pdf_path")
            .and_then(StoredValue::as_str)
            .ok_or_else(|| ToolError::new("pdf_path must be a string"))?;
        self.read(path).map(StoredValue::Text).map_err(ToolError::new)
    }
}

pub struct ExtractSdsTool {
    descriptor: ToolDescriptor,
}

impl Default for ExtractSdsTool {
    fn default() -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                EXTRACT_TOOL,
                "Extracts the product name and the ingredients (name, CAS number, concentration, formula) \
                 from the text of a safety data sheet.",
                vec![Parameter::required(
                    "content",
                    ParamKind::String,
                    "Text of the safety data sheet.",
                )],
            ),
        }
    }
}

impl Tool for ExtractSdsTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        let content = args
            .get("content")
            .and_then(StoredValue::as_str)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| ToolError::new("content must be a nonempty string"))?;
        extract_sds(content).map(|s| s.to_value()).map_err(ToolError::new)
    }
}

/// `tika` serving `document` as `sds.pdf`, plus `extract_sds`.
pub fn sds_tools(document: String) -> Vec<Arc<dyn Tool>> {
    let documents = BTreeMap::from([(DEFAULT_DOCUMENT_NAME.to_owned(), document)]);
    vec![
        Arc::new(TikaTool::new(documents, None)),
        Arc::new(ExtractSdsTool::default()),
    ]
}
