//! Token accounting for agent runs.
//!
//! Each step of a run is logged as a [`TraceRecord`] carrying two counts: the
//! tokens the step actually put into context, and the tokens it would have
//! cost had every memory path been replaced by the value it points to.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryStore;
use crate::path::{parse, resolve_arguments, DanglingPath};
use crate::value::ArgumentTree;

pub const DEFAULT_COUNTER: &str = "bytes/4";

/// A deterministic text → token-count function.
///
/// Implementations must return 0 for the empty string and be nearly additive:
/// `count(a + b) <= count(a) + count(b) + 1`.
pub trait TokenCounter: Send + Sync {
    fn scheme(&self) -> &str;
    fn count(&self, text: &str) -> u64;
}

/// `ceil(bytes / n)`.
#[derive(Debug, Clone)]
pub struct BytesPerToken {
    divisor: u64,
    scheme: String,
}

impl BytesPerToken {
    pub fn new(divisor: u64) -> Self {
        assert!(divisor > 0, "divisor must be positive");
        Self {
            divisor,
            scheme: format!("bytes/{divisor}"),
        }
    }
}

impl Default for BytesPerToken {
    fn default() -> Self {
        Self::new(4)
    }
}

impl TokenCounter for BytesPerToken {
    fn scheme(&self) -> &str {
        &self.scheme
    }

    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(self.divisor)
    }
}

/// `ceil(chars / n)`, counting Unicode scalar values.
#[derive(Debug, Clone)]
pub struct CharsPerToken {
    divisor: u64,
    scheme: String,
}

impl CharsPerToken {
    pub fn new(divisor: u64) -> Self {
        assert!(divisor > 0, "divisor must be positive");
        Self {
            divisor,
            scheme: format!("chars/{divisor}"),
        }
    }
}

impl TokenCounter for CharsPerToken {
    fn scheme(&self) -> &str {
        &self.scheme
    }

    fn count(&self, text: &str) -> u64 {
        (text.chars().count() as u64).div_ceil(self.divisor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown token counter scheme {0:?} (expected bytes/N or chars/N)")]
pub struct UnknownScheme(pub String);

/// Builds a counter from its scheme id, e.g. `bytes/4` or `chars/3`.
pub fn counter_for_scheme(scheme: &str) -> Result<Arc<dyn TokenCounter>, UnknownScheme> {
    let err = || UnknownScheme(scheme.to_owned());
    let (unit, n) = scheme.split_once('/').ok_or_else(err)?;
    let n: u64 = n.parse().ok().filter(|n| *n > 0).ok_or_else(err)?;
    match unit {
        "bytes" => Ok(Arc::new(BytesPerToken::new(n))),
        "chars" => Ok(Arc::new(CharsPerToken::new(n))),
        _ => Err(err()),
    }
}

pub fn count_tokens(text: &str, counter: &dyn TokenCounter) -> u64 {
    counter.count(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub tool: String,
    /// Arguments as the agent wrote them, before path resolution.
    #[serde(skip)]
    pub arguments: Option<ArgumentTree>,
    pub arguments_text: String,
    pub result_text: String,
    /// Base path under which the result was stored, when it was.
    pub result_path: Option<String>,
    pub tokens_actual: u64,
    pub tokens_counterfactual: u64,
    #[serde(with = "duration_ms")]
    pub wall_time: Duration,
}

impl TraceRecord {
    /// A plain message entering context (prompt, final answer).
    pub fn message(step: usize, label: &str, text: String, counter: &dyn TokenCounter) -> Self {
        let tokens = counter.count(&text);
        Self {
            step,
            tool: label.to_owned(),
            arguments: None,
            arguments_text: String::new(),
            result_text: text,
            result_path: None,
            tokens_actual: tokens,
            tokens_counterfactual: tokens,
            wall_time: Duration::ZERO,
        }
    }

    /// A tool call and its result. `store` is needed to price the
    /// counterfactual when the call involved memory paths.
    #[allow(clippy::too_many_arguments)]
    pub fn tool_call(
        step: usize,
        tool: &str,
        arguments: &ArgumentTree,
        result_text: String,
        result_path: Option<String>,
        wall_time: Duration,
        store: Option<&MemoryStore>,
        counter: &dyn TokenCounter,
    ) -> Result<Self, DanglingPath> {
        let arguments_text = arguments.summary_json();
        let mut record = Self {
            step,
            tool: tool.to_owned(),
            arguments: Some(arguments.clone()),
            tokens_actual: counter.count(&arguments_text) + counter.count(&result_text),
            arguments_text,
            result_text,
            result_path,
            tokens_counterfactual: 0,
            wall_time,
        };
        record.tokens_counterfactual = match store {
            Some(store) => record_counterfactual(&record, store, counter)?,
            None => record.tokens_actual,
        };
        Ok(record)
    }
}

/// Tokens of one record with path arguments and stored results inlined.
pub fn record_counterfactual(
    record: &TraceRecord,
    store: &MemoryStore,
    counter: &dyn TokenCounter,
) -> Result<u64, DanglingPath> {
    let args_tokens = match &record.arguments {
        Some(args) => counter.count(&resolve_arguments(args, store)?.summary_json()),
        None => counter.count(&record.arguments_text),
    };
    let result_tokens = match &record.result_path {
        Some(path) => {
            let value = parse(path)
                .and_then(|p| store.get(&p).ok())
                .ok_or_else(|| DanglingPath(path.clone()))?;
            counter.count(&value.render_text())
        }
        None => counter.count(&record.result_text),
    };
    Ok(args_tokens + result_tokens)
}

/// Total tokens of `trace` had raw values been inlined wherever memory paths
/// appeared.
pub fn counterfactual_tokens(
    trace: &[TraceRecord],
    store: &MemoryStore,
    counter: &dyn TokenCounter,
) -> Result<u64, DanglingPath> {
    trace.iter().map(|r| record_counterfactual(r, store, counter)).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub step: usize,
    pub tool: String,
    /// Stable failure kind, e.g. `ContextOverflow`.
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub total_tokens_actual: u64,
    pub total_tokens_counterfactual: u64,
    pub steps: usize,
    pub wall_time_ms: f64,
    pub completed: bool,
    pub failure_reason: Option<Failure>,
}

pub fn report(trace: &[TraceRecord], failure: Option<Failure>) -> Report {
    Report {
        total_tokens_actual: trace.iter().map(|r| r.tokens_actual).sum(),
        total_tokens_counterfactual: trace.iter().map(|r| r.tokens_counterfactual).sum(),
        steps: trace.len(),
        wall_time_ms: trace.iter().map(|r| r.wall_time.as_secs_f64() * 1e3).sum(),
        completed: failure.is_none(),
        failure_reason: failure,
    }
}

mod duration_ms {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }
}
