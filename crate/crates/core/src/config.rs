//! TOML configuration for the `toolmem` binary.
//!
//! Every field has a default, so an empty file is a valid configuration:
//!
//! ```toml
//! endpoints = ["python upstream_server.py", "tcp://127.0.0.1:9000"]
//! counter = "bytes/4"
//! context_limit_tokens = 1000000
//! store_capacity_bytes = 1073741824
//! log_level = "info"
//!
//! [mirror]
//! threshold_bytes = 4096
//! name_suffix = "_mirrored"
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::agent::DEFAULT_CONTEXT_LIMIT_TOKENS;
use crate::ledger::{counter_for_scheme, TokenCounter, DEFAULT_COUNTER};
use crate::mirror::{
    InstructionTemplates, MirrorConfig, DEFAULT_BASE_TEMPLATE, DEFAULT_KEYS_TEMPLATE, DEFAULT_NAME_SUFFIX,
    DEFAULT_THRESHOLD_BYTES,
};
use crate::proxy::UpstreamEndpoint;

pub const ENV_THRESHOLD: &str = "TOOLMEM_THRESHOLD_BYTES";
pub const ENV_COUNTER: &str = "TOOLMEM_COUNTER";

const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigLoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
}

impl ConfigLoadError {
    fn invalid(field: &str, message: impl ToString) -> Self {
        ConfigLoadError::Validation {
            field: field.to_owned(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorSection {
    pub threshold_bytes: u64,
    pub name_suffix: String,
    pub base_template: String,
    pub keys_template: String,
}

impl Default for MirrorSection {
    fn default() -> Self {
        Self {
            threshold_bytes: DEFAULT_THRESHOLD_BYTES,
            name_suffix: DEFAULT_NAME_SUFFIX.to_owned(),
            base_template: DEFAULT_BASE_TEMPLATE.to_owned(),
            keys_template: DEFAULT_KEYS_TEMPLATE.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Upstream tool servers: `tcp://host:port` or a command line.
    pub endpoints: Vec<String>,
    pub counter: String,
    pub context_limit_tokens: u64,
    /// No limit when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_capacity_bytes: Option<u64>,
    pub log_level: String,
    pub mirror: MirrorSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            endpoints: Vec::new(),
            counter: DEFAULT_COUNTER.to_owned(),
            context_limit_tokens: DEFAULT_CONTEXT_LIMIT_TOKENS,
            store_capacity_bytes: None,
            log_level: "info".to_owned(),
            mirror: MirrorSection::default(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl AppConfig {
    /// Parses and validates TOML text. Environment overrides are not applied.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigLoadError> {
        let config: AppConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            ConfigLoadError::Parse {
                line,
                column,
                message: e.message().trim().to_owned(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, applies environment overrides, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigLoadError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigLoadError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml_str(&text)?;
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    /// Applies `TOOLMEM_THRESHOLD_BYTES` and `TOOLMEM_COUNTER` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigLoadError> {
        if let Some(raw) = lookup(ENV_THRESHOLD) {
            self.mirror.threshold_bytes = raw.trim().parse().map_err(|_| {
                ConfigLoadError::invalid(
                    "mirror.threshold_bytes",
                    format!("{ENV_THRESHOLD}={raw:?} is not an integer"),
                )
            })?;
        }
        if let Some(raw) = lookup(ENV_COUNTER) {
            self.counter = raw;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigLoadError> {
        self.mirror_config().validate().map_err(|e| {
            let field = match e {
                crate::mirror::ConfigError::ZeroThreshold => "mirror.threshold_bytes",
                crate::mirror::ConfigError::EmptySuffix => "mirror.name_suffix",
                crate::mirror::ConfigError::BaseTemplate => "mirror.base_template",
                crate::mirror::ConfigError::KeysTemplate => "mirror.keys_template",
            };
            ConfigLoadError::invalid(field, e)
        })?;
        counter_for_scheme(&self.counter).map_err(|e| ConfigLoadError::invalid("counter", e))?;
        if self.context_limit_tokens == 0 {
            return Err(ConfigLoadError::invalid("context_limit_tokens", "must be at least 1"));
        }
        if self.store_capacity_bytes == Some(0) {
            return Err(ConfigLoadError::invalid("store_capacity_bytes", "must be at least 1"));
        }
        if !LOG_LEVELS.contains(&self.log_level.as_str()) {
            return Err(ConfigLoadError::invalid(
                "log_level",
                format!("{:?} is not one of {}", self.log_level, LOG_LEVELS.join(", ")),
            ));
        }
        self.upstreams()?;
        Ok(())
    }

    pub fn mirror_config(&self) -> MirrorConfig {
        MirrorConfig {
            threshold_bytes: self.mirror.threshold_bytes,
            name_suffix: self.mirror.name_suffix.clone(),
            templates: InstructionTemplates {
                base: self.mirror.base_template.clone(),
                keys_addendum: self.mirror.keys_template.clone(),
            },
        }
    }

    pub fn token_counter(&self) -> Result<Arc<dyn TokenCounter>, ConfigLoadError> {
        counter_for_scheme(&self.counter).map_err(|e| ConfigLoadError::invalid("counter", e))
    }

    pub fn upstreams(&self) -> Result<Vec<UpstreamEndpoint>, ConfigLoadError> {
        self.endpoints
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                spec.parse()
                    .map_err(|e| ConfigLoadError::invalid(&format!("endpoints[{i}]"), e))
            })
            .collect()
    }

    /// Normalized TOML with every field present.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
