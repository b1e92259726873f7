//! Synthetic electronic-grid tools.
//!
//! Grids are pseudo-random but fully determined by the SMILES string and a
//! seed. Each molecule draws a density offset and then per-voxel noise, so
//! cosine similarity between two grids is governed mostly by their offsets.
//! Voxel values are multiples of 1e-6 in (-1, 1), so their shortest decimal
//! rendering has at most six significant digits.

use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mirror::{ParamKind, Parameter, Tool, ToolDescriptor, ToolError};
use crate::value::{ArgumentTree, StoredValue};

pub const GRID_SIDE: usize = 128;
pub const DEFAULT_TOP_K: usize = 10;
pub const GRID_TOOL: &str = "generate_molecule_grid";
pub const SIMILARITY_TOOL: &str = "retrieve_similar_molecules";

const DEFAULT_CORPUS: &str = include_str!("../../fixtures/corpus.json");
const OFFSET_SPAN: u32 = 800_001;
const NOISE_SPAN: u32 = 1_000_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub side: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            side: GRID_SIDE,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn new(side: usize, seed: u64) -> Self {
        Self { side, seed }
    }

    pub fn len(&self) -> usize {
        self.side.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("ShapeMismatch: expected {expected} grid values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("raw_grid must be an array of numbers")]
    NotNumeric,
    #[error("invalid corpus: {0}")]
    Corpus(String),
}

fn molecule_rng(smiles: &str, seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(smiles.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Uniform draw in `0..span` by multiply-shift.
fn draw(rng: &mut ChaCha8Rng, span: u32) -> i32 {
    ((u64::from(rng.next_u32()) * u64::from(span)) >> 32) as i32
}

/// Grid values of `smiles` in millionths, in row-major order.
pub fn grid_micros(smiles: &str, spec: GridSpec) -> impl Iterator<Item = i32> {
    let mut rng = molecule_rng(smiles, spec.seed);
    let offset = draw(&mut rng, OFFSET_SPAN) - (OFFSET_SPAN / 2) as i32;
    (0..spec.len()).map(move |_| offset + draw(&mut rng, NOISE_SPAN) - (NOISE_SPAN / 2) as i32)
}

pub fn micros_to_f64(micros: i32) -> f64 {
    f64::from(micros) / 1e6
}

pub fn grid_values(smiles: &str, spec: GridSpec) -> Vec<f64> {
    grid_micros(smiles, spec).map(micros_to_f64).collect()
}

/// Output of the grid tool: `{raw_grid: [...], shape: [side, side, side]}`.
pub fn generate_molecule_grid(smiles: &str, spec: GridSpec) -> StoredValue {
    let raw: Vec<StoredValue> = grid_micros(smiles, spec)
        .map(|m| StoredValue::float(micros_to_f64(m)).expect("grid values are finite"))
        .collect();
    let side = spec.side as u64;
    [
        ("raw_grid".to_owned(), StoredValue::Array(raw)),
        (
            "shape".to_owned(),
            StoredValue::Array(vec![side.into(), side.into(), side.into()]),
        ),
    ]
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub smiles: String,
    pub score: f64,
}

/// Reference molecules the similarity tool ranks against. Their grids are
/// regenerated on demand from the same generator as the grid tool.
#[derive(Debug, Clone)]
pub struct SimilarityCorpus {
    molecules: Vec<String>,
    spec: GridSpec,
    k: usize,
}

#[derive(Deserialize)]
struct CorpusFile {
    molecules: Vec<String>,
}

impl SimilarityCorpus {
    pub fn new(molecules: Vec<String>, spec: GridSpec, k: usize) -> Self {
        Self { molecules, spec, k }
    }

    pub fn from_json(text: &str, spec: GridSpec, k: usize) -> Result<Self, GridError> {
        let file: CorpusFile = serde_json::from_str(text).map_err(|e| GridError::Corpus(e.to_string()))?;
        Ok(Self::new(file.molecules, spec, k))
    }

    /// The bundled 100-molecule corpus.
    pub fn bundled(spec: GridSpec) -> Self {
        Self::from_json(DEFAULT_CORPUS, spec, DEFAULT_TOP_K).expect("bundled corpus is valid")
    }

    pub fn molecules(&self) -> &[String] {
        &self.molecules
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Cosine similarity of `query` against every corpus grid, in corpus order.
    pub fn score_all(&self, query: &[f64]) -> Result<Vec<Scored>, GridError> {
        if query.len() != self.spec.len() {
            return Err(GridError::ShapeMismatch {
                expected: self.spec.len(),
                actual: query.len(),
            });
        }
        let query_norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(self
            .molecules
            .iter()
            .map(|smiles| {
                let (mut dot, mut norm) = (0.0, 0.0);
                for (q, m) in query.iter().zip(grid_micros(smiles, self.spec)) {
                    let c = micros_to_f64(m);
                    dot += q * c;
                    norm += c * c;
                }
                let denom = query_norm * norm.sqrt();
                let score = if denom > 0.0 {
                    (dot / denom).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                Scored {
                    smiles: smiles.clone(),
                    score,
                }
            })
            .collect())
    }

    /// The `k` best matches, best first; ties keep corpus order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Scored>, GridError> {
        let mut scored = self.score_all(query)?;
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        scored.truncate(k);
        Ok(scored)
    }
}

pub fn format_top_k(hits: &[Scored]) -> String {
    let mut out = String::from("Top-K similar samples:");
    for (i, hit) in hits.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. SMILES: {} | Score: {:.4}",
            i + 1,
            hit.smiles,
            hit.score
        ));
    }
    out
}

fn numeric_array(value: &StoredValue) -> Result<Vec<f64>, GridError> {
    value
        .as_array()
        .ok_or(GridError::NotNumeric)?
        .iter()
        .map(|v| v.as_f64().ok_or(GridError::NotNumeric))
        .collect()
}

pub struct GridTool {
    descriptor: ToolDescriptor,
    spec: GridSpec,
}

impl GridTool {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                GRID_TOOL,
                "Generates the 3D electronic grid structure of a molecule given its SMILES string.",
                vec![Parameter::required(
                    "molecule_description",
                    ParamKind::String,
                    "SMILES string of the molecule.",
                )],
            ),
            spec,
        }
    }
}

impl Tool for GridTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        let smiles = args
            .get("molecule_description")
            .and_then(StoredValue::as_str)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ToolError::new("molecule_description must be a nonempty string"))?;
        Ok(generate_molecule_grid(smiles, self.spec))
    }
}

pub struct SimilarityTool {
    descriptor: ToolDescriptor,
    corpus: Arc<SimilarityCorpus>,
}

impl SimilarityTool {
    pub fn new(corpus: Arc<SimilarityCorpus>) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                SIMILARITY_TOOL,
                "Retrieves the top-k molecules whose electronic grids are most similar to the given grid, \
                 with their similarity scores and SMILES strings.",
                vec![
                    Parameter::required("raw_grid", ParamKind::Array, "Flattened electronic grid."),
                    Parameter::optional("k", ParamKind::Integer, "Number of results (default 10)."),
                ],
            ),
            corpus,
        }
    }
}

impl Tool for SimilarityTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        let grid = args
            .get("raw_grid")
            .ok_or_else(|| ToolError::new("raw_grid is required"))?;
        let query = numeric_array(grid).map_err(ToolError::new)?;
        let k = match args.get("k") {
            None | Some(StoredValue::Null) => self.corpus.k(),
            Some(v) => v
                .as_f64()
                .filter(|k| k.fract() == 0.0 && *k >= 1.0)
                .map(|k| k as usize)
                .ok_or_else(|| ToolError::new("k must be a positive integer"))?,
        };
        let hits = self.corpus.top_k(&query, k).map_err(ToolError::new)?;
        Ok(StoredValue::Text(format_top_k(&hits)))
    }
}

pub fn grid_tools(spec: GridSpec, corpus: Arc<SimilarityCorpus>) -> Vec<Arc<dyn Tool>> {
    vec![Arc::new(GridTool::new(spec)), Arc::new(SimilarityTool::new(corpus))]
}
