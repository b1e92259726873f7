//! Pointer-aware mirrors of ordinary tools.
//!
//! A mirrored call resolves memory paths in its arguments, runs the original
//! tool on the raw values, and stores the output when its canonical size is
//! above the configured threshold. Stored outputs are replaced by an access
//! instruction naming the path the agent should pass on.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::memory::{MemoryStore, StoreError};
use crate::path::{is_valid_tool_name, resolve_arguments, DanglingPath, MemoryPath};
use crate::value::{ArgumentTree, StoredValue};

pub const DEFAULT_THRESHOLD_BYTES: u64 = 4096;
pub const DEFAULT_NAME_SUFFIX: &str = "_mirrored";

/// Placeholders: `{tool}`, `{args}`, `{path}`.
pub const DEFAULT_BASE_TEMPLATE: &str = "The result of the function {tool} with the input value stored at {args} \
is currently stored at {path}. When you need to access it, pass as argument for the tool its path: {path}.";

/// Placeholders: `{path}`, `{keys}`, `{key_paths}`.
pub const DEFAULT_KEYS_TEMPLATE: &str = " The result stored is a dict with the keys {keys}. When you want to access \
only a particular value stored under these keys, use as memory path {key_paths}, depending on which value you want to use.";

pub const MIRROR_DESCRIPTION_NOTE: &str =
    "Every parameter accepts either a raw value or a memory path returned by an earlier tool call.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
    Any,
}

impl ParamKind {
    fn json_type(self) -> Option<&'static str> {
        Some(match self {
            ParamKind::String => "string",
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::Boolean => "boolean",
            ParamKind::Array => "array",
            ParamKind::Object => "object",
            ParamKind::Any => return None,
        })
    }

    fn from_json_type(t: Option<&str>) -> Self {
        match t {
            Some("string") => ParamKind::String,
            Some("number") => ParamKind::Number,
            Some("integer") => ParamKind::Integer,
            Some("boolean") => ParamKind::Boolean,
            Some("array") => ParamKind::Array,
            Some("object") => ParamKind::Object,
            _ => ParamKind::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl Parameter {
    pub fn required(name: &str, kind: ParamKind, description: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            required: true,
            description: description.to_owned(),
        }
    }

    pub fn optional(name: &str, kind: ParamKind, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, kind, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<Parameter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("invalid tool name {0:?}")]
    InvalidName(String),
    #[error("tool {tool}: duplicate parameter {param:?}")]
    DuplicateParameter { tool: String, param: String },
    #[error("malformed tool descriptor: {0}")]
    Malformed(String),
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, parameters: Vec<Parameter>) -> Self {
        Self {
            name: name.to_owned(),
            description: description.to_owned(),
            parameters,
        }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        if !is_valid_tool_name(&self.name) {
            return Err(DescriptorError::InvalidName(self.name.clone()));
        }
        let mut seen = HashSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(DescriptorError::DuplicateParameter {
                    tool: self.name.clone(),
                    param: p.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// JSON Schema object for the parameters, as carried in `inputSchema`.
    pub fn input_schema(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.parameters {
            let mut prop = Map::new();
            if let Some(t) = p.kind.json_type() {
                prop.insert("type".into(), json!(t));
            }
            if !p.description.is_empty() {
                prop.insert("description".into(), json!(p.description));
            }
            properties.insert(p.name.clone(), Value::Object(prop));
        }
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({"type": "object", "properties": properties, "required": required})
    }

    pub fn to_wire(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema(),
        })
    }

    /// Reads one entry of a `tools/list` response.
    pub fn from_wire(value: &Value) -> Result<Self, DescriptorError> {
        let name = value
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| DescriptorError::Malformed("missing tool name".into()))?;
        let description = value.get("description").and_then(Value::as_str).unwrap_or("");
        let schema = value.get("inputSchema").cloned().unwrap_or_else(|| json!({}));
        let required: HashSet<&str> = schema
            .get("required")
            .and_then(Value::as_array)
            .map(|r| r.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let mut parameters = Vec::new();
        if let Some(props) = schema.get("properties") {
            let props = props
                .as_object()
                .ok_or_else(|| DescriptorError::Malformed(format!("tool {name}: properties is not an object")))?;
            for (pname, prop) in props {
                parameters.push(Parameter {
                    name: pname.clone(),
                    kind: ParamKind::from_json_type(prop.get("type").and_then(Value::as_str)),
                    required: required.contains(pname.as_str()),
                    description: prop.get("description").and_then(Value::as_str).unwrap_or("").to_owned(),
                });
            }
        }
        let descriptor = Self::new(name, description, parameters);
        descriptor.validate()?;
        Ok(descriptor)
    }
}

/// Failure reported by an original tool. The message reaches the agent as is.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ToolError(pub String);

impl ToolError {
    pub fn new(message: impl fmt::Display) -> Self {
        Self(message.to_string())
    }
}

/// A callable tool: local code or a proxy for an upstream server.
pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;
    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError>;
}

/// Adapts a closure into a [`Tool`].
pub struct FnTool<F> {
    descriptor: ToolDescriptor,
    f: F,
}

impl<F> FnTool<F>
where
    F: Fn(&ArgumentTree) -> Result<StoredValue, ToolError> + Send + Sync,
{
    pub fn new(descriptor: ToolDescriptor, f: F) -> Self {
        Self { descriptor, f }
    }

    pub fn shared(descriptor: ToolDescriptor, f: F) -> Arc<dyn Tool>
    where
        F: 'static,
    {
        Arc::new(Self::new(descriptor, f))
    }
}

impl<F> Tool for FnTool<F>
where
    F: Fn(&ArgumentTree) -> Result<StoredValue, ToolError> + Send + Sync,
{
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, args: &ArgumentTree) -> Result<StoredValue, ToolError> {
        (self.f)(args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplates {
    pub base: String,
    pub keys_addendum: String,
}

impl Default for InstructionTemplates {
    fn default() -> Self {
        Self {
            base: DEFAULT_BASE_TEMPLATE.to_owned(),
            keys_addendum: DEFAULT_KEYS_TEMPLATE.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorConfig {
    pub threshold_bytes: u64,
    pub name_suffix: String,
    pub templates: InstructionTemplates,
}

impl Default for MirrorConfig {
    fn default() -> Self {
        Self {
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            name_suffix: DEFAULT_NAME_SUFFIX.to_owned(),
            templates: InstructionTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("threshold_bytes must be at least 1")]
    ZeroThreshold,
    #[error("name_suffix must not be empty")]
    EmptySuffix,
    #[error("base template must mention {{path}} at least twice")]
    BaseTemplate,
    #[error("keys template must mention {{key_paths}}")]
    KeysTemplate,
}

impl MirrorConfig {
    pub fn with_threshold(threshold_bytes: u64) -> Self {
        Self {
            threshold_bytes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threshold_bytes == 0 {
            return Err(ConfigError::ZeroThreshold);
        }
        if self.name_suffix.is_empty() {
            return Err(ConfigError::EmptySuffix);
        }
        if self.templates.base.matches("{path}").count() < 2 {
            return Err(ConfigError::BaseTemplate);
        }
        if !self.templates.keys_addendum.contains("{key_paths}") {
            return Err(ConfigError::KeysTemplate);
        }
        Ok(())
    }

    pub fn mirrored_name(&self, original: &str) -> String {
        format!("{original}{}", self.name_suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessInstruction {
    pub text: String,
    pub base_path: MemoryPath,
    pub child_keys: Vec<String>,
}

/// Outcome of a mirrored call: the raw output, or where it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolResult {
    Raw(StoredValue),
    Stored(AccessInstruction),
}

impl ToolResult {
    /// The text placed in agent context.
    pub fn text(&self) -> String {
        match self {
            ToolResult::Raw(v) => v.render_text(),
            ToolResult::Stored(i) => i.text.clone(),
        }
    }

    pub fn stored_path(&self) -> Option<&MemoryPath> {
        match self {
            ToolResult::Stored(i) => Some(&i.base_path),
            ToolResult::Raw(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MirrorError {
    #[error(transparent)]
    DanglingPath(#[from] DanglingPath),
    #[error("tool {tool} failed: {message}")]
    ToolExecution { tool: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("tool name {0} is already taken")]
    NameCollision(String),
}

/// Builds the advertised descriptor of the mirrored variant of `original`.
/// `taken` holds names already present in the catalog.
pub fn mirror_tool(
    original: &ToolDescriptor,
    config: &MirrorConfig,
    taken: &HashSet<String>,
) -> Result<ToolDescriptor, MirrorError> {
    let name = config.mirrored_name(&original.name);
    if taken.contains(&name) {
        return Err(MirrorError::NameCollision(name));
    }
    let description = if original.description.trim().is_empty() {
        MIRROR_DESCRIPTION_NOTE.to_owned()
    } else {
        format!("{} {MIRROR_DESCRIPTION_NOTE}", original.description.trim_end())
    };
    Ok(ToolDescriptor {
        name,
        description,
        parameters: original.parameters.clone(),
    })
}

/// Runs `tool` behind the mirror: resolve, invoke, then store if large.
pub fn invoke_mirrored(
    tool: &dyn Tool,
    args: &ArgumentTree,
    store: &MemoryStore,
    config: &MirrorConfig,
) -> Result<ToolResult, MirrorError> {
    let resolved = resolve_arguments(args, store)?;
    let name = &tool.descriptor().name;
    let output = tool.call(&resolved).map_err(|e| MirrorError::ToolExecution {
        tool: name.clone(),
        message: e.0,
    })?;
    Ok(postprocess(name, &args.summary_json(), output, store, config)?)
}

/// Stores `output` and returns an access instruction when its canonical size
/// exceeds the threshold; otherwise hands it back untouched.
pub fn postprocess(
    tool_name: &str,
    arg_summary: &str,
    output: StoredValue,
    store: &MemoryStore,
    config: &MirrorConfig,
) -> Result<ToolResult, StoreError> {
    if output.byte_size() <= config.threshold_bytes {
        return Ok(ToolResult::Raw(output));
    }
    let base_path = store.put(tool_name, output)?;
    let child_keys = store.child_keys(&base_path);
    let text = render_instruction_with(&config.templates, tool_name, arg_summary, &base_path, &child_keys);
    Ok(ToolResult::Stored(AccessInstruction {
        text,
        base_path,
        child_keys,
    }))
}

/// Renders the access instruction with the default templates.
pub fn render_instruction(tool_name: &str, arg_summary: &str, base_path: &MemoryPath, child_keys: &[String]) -> String {
    render_instruction_with(
        &InstructionTemplates::default(),
        tool_name,
        arg_summary,
        base_path,
        child_keys,
    )
}

pub fn render_instruction_with(
    templates: &InstructionTemplates,
    tool_name: &str,
    arg_summary: &str,
    base_path: &MemoryPath,
    child_keys: &[String],
) -> String {
    let path = base_path.to_string();
    let mut text = fill(
        &templates.base,
        &[("tool", tool_name), ("args", arg_summary), ("path", &path)],
    );
    if !child_keys.is_empty() {
        let keys = join_list(child_keys.iter().map(String::as_str), "and");
        let child_paths: Vec<String> = child_keys.iter().map(|k| format!("{path}/{k}")).collect();
        let key_paths = join_list(child_paths.iter().map(String::as_str), "or");
        text.push_str(&fill(
            &templates.keys_addendum,
            &[("path", &path), ("keys", &keys), ("key_paths", &key_paths)],
        ));
    }
    text
}

/// `a`, `a and b`, `a, b and c`.
fn join_list<'a>(items: impl ExactSizeIterator<Item = &'a str>, conjunction: &str) -> String {
    let items: Vec<&str> = items.collect();
    match items.split_last() {
        None => String::new(),
        Some((last, [])) => (*last).to_owned(),
        Some((last, rest)) => format!("{} {conjunction} {last}", rest.join(", ")),
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
