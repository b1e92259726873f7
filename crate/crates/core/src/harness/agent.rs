//! A fixed-plan agent standing in for the language model.
//!
//! The plan names original tools; in mirrored mode the agent calls their
//! mirrored variants through a [`ProxySession`] and carries memory paths
//! between steps, in conventional mode it calls the tools directly and
//! carries raw values.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ledger::{report, Failure, Report, TokenCounter, TraceRecord};
use crate::mirror::{Tool, ToolResult};
use crate::path::{find_paths, MemoryPath};
use crate::proxy::{ProxySession, FINAL_ANSWER_TOOL};
use crate::value::{ArgumentTree, StoredValue};

pub const CONTEXT_OVERFLOW: &str = "ContextOverflow";
pub const DEFAULT_CONTEXT_LIMIT_TOKENS: u64 = 1_000_000;
pub const SYSTEM_PROMPT: &str = "You are a helpful scientific assistant.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Conventional,
    Mirrored,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Conventional => "conventional",
            Mode::Mirrored => "mirrored",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conventional" => Ok(Mode::Conventional),
            "mirrored" => Ok(Mode::Mirrored),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Where an argument value comes from.
#[derive(Debug, Clone)]
pub enum Slot {
    Literal(StoredValue),
    /// Output of an earlier `Call` (by index among plan steps), optionally
    /// one key of it.
    FromStep {
        step: usize,
        key: Option<String>,
    },
}

impl Slot {
    pub fn literal(v: impl Into<StoredValue>) -> Self {
        Slot::Literal(v.into())
    }

    pub fn output(step: usize) -> Self {
        Slot::FromStep { step, key: None }
    }

    pub fn key(step: usize, key: &str) -> Self {
        Slot::FromStep {
            step,
            key: Some(key.to_owned()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Step {
    Call {
        tool: String,
        args: Vec<(String, Slot)>,
    },
    /// Looks at a value without producing the answer.
    Inspect(Slot),
    /// Presents a value as the final answer.
    Answer(Slot),
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub user_prompt: String,
    pub steps: Vec<Step>,
}

/// What the agent holds for an earlier step's output.
#[derive(Debug, Clone)]
enum Handle {
    Path(MemoryPath),
    Value(StoredValue),
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentRun {
    pub trace: Vec<TraceRecord>,
    pub final_answer: Option<String>,
    pub report: Report,
}

/// Everything the agent talks to, by mode.
pub enum Backend<'a> {
    Conventional(&'a [Arc<dyn Tool>]),
    Mirrored(&'a ProxySession),
}

pub struct ScriptedAgent {
    pub plan: Plan,
    pub context_limit_tokens: u64,
    pub counter: Arc<dyn TokenCounter>,
}

struct RunState<'c> {
    counter: &'c dyn TokenCounter,
    limit: u64,
    trace: Vec<TraceRecord>,
    context: u64,
    failure: Option<Failure>,
}

impl RunState<'_> {
    /// Adds a record; false once the context limit is crossed.
    fn push(&mut self, mut record: TraceRecord) -> bool {
        record.step = self.trace.len();
        self.context += record.tokens_actual;
        let over = self.context > self.limit;
        if over {
            self.failure = Some(Failure {
                step: record.step,
                tool: record.tool.clone(),
                reason: CONTEXT_OVERFLOW.into(),
                detail: format!("context reached {} tokens, limit is {}", self.context, self.limit),
            });
        }
        self.trace.push(record);
        !over
    }

    fn fail(&mut self, tool: &str, reason: &str, detail: String) {
        self.failure = Some(Failure {
            step: self.trace.len(),
            tool: tool.to_owned(),
            reason: reason.to_owned(),
            detail,
        });
    }
}

impl ScriptedAgent {
    pub fn new(plan: Plan, context_limit_tokens: u64, counter: Arc<dyn TokenCounter>) -> Self {
        Self {
            plan,
            context_limit_tokens,
            counter,
        }
    }

    fn prompt_text(&self, backend: &Backend<'_>) -> String {
        let tools: Vec<Value> = match backend {
            Backend::Conventional(tools) => tools.iter().map(|t| t.descriptor().to_wire()).collect(),
            Backend::Mirrored(session) => session.list_tools().iter().map(|d| d.to_wire()).collect(),
        };
        format!(
            "{SYSTEM_PROMPT}\n\n{}\n\nTools: {}",
            self.plan.user_prompt,
            Value::Array(tools)
        )
    }

    pub fn run(&self, backend: Backend<'_>) -> AgentRun {
        let mut state = RunState {
            counter: self.counter.as_ref(),
            limit: self.context_limit_tokens,
            trace: Vec::new(),
            context: 0,
            failure: None,
        };
        let mut outputs: HashMap<usize, Handle> = HashMap::new();
        let mut final_answer = None;

        let prompt = TraceRecord::message(0, "prompt", self.prompt_text(&backend), state.counter);
        if state.push(prompt) {
            for (index, step) in self.plan.steps.iter().enumerate() {
                let outcome = match step {
                    Step::Call { tool, args } => self.call(&backend, &mut state, &outputs, tool, args).map(|h| {
                        outputs.insert(index, h);
                    }),
                    Step::Inspect(slot) => self.show(&backend, &mut state, &outputs, slot).map(drop),
                    Step::Answer(slot) => self.show(&backend, &mut state, &outputs, slot).and_then(|text| {
                        let record = TraceRecord::message(0, "final_answer", text.clone(), state.counter);
                        final_answer = Some(text);
                        state.push(record).then_some(()).ok_or(())
                    }),
                };
                if outcome.is_err() {
                    break;
                }
            }
        }
        if state.failure.is_some() {
            final_answer = None;
        }
        AgentRun {
            report: report(&state.trace, state.failure.clone()),
            trace: state.trace,
            final_answer,
        }
    }

    /// Fills an argument slot with what the agent would write.
    fn fill(&self, outputs: &HashMap<usize, Handle>, slot: &Slot) -> Result<StoredValue, String> {
        match slot {
            Slot::Literal(v) => Ok(v.clone()),
            Slot::FromStep { step, key } => match (outputs.get(step), key) {
                (Some(Handle::Path(p)), None) => Ok(StoredValue::Text(p.to_string())),
                (Some(Handle::Path(p)), Some(k)) => p
                    .child(k)
                    .map(|c| StoredValue::Text(c.to_string()))
                    .map_err(|e| e.to_string()),
                (Some(Handle::Value(v)), None) => Ok(v.clone()),
                (Some(Handle::Value(v)), Some(k)) => v
                    .get(k)
                    .cloned()
                    .ok_or_else(|| format!("step {step} output has no key {k:?}")),
                _ => Err(format!("step {step} has no output")),
            },
        }
    }

    fn call(
        &self,
        backend: &Backend<'_>,
        state: &mut RunState<'_>,
        outputs: &HashMap<usize, Handle>,
        tool: &str,
        slots: &[(String, Slot)],
    ) -> Result<Handle, ()> {
        let args: Result<ArgumentTree, String> = slots
            .iter()
            .map(|(name, slot)| self.fill(outputs, slot).map(|v| (name.clone(), v)))
            .collect::<Result<Vec<_>, _>>()
            .map(|pairs| pairs.into_iter().collect());
        let args = match args {
            Ok(a) => a,
            Err(e) => {
                state.fail(tool, "PlanError", e);
                return Err(());
            }
        };
        match backend {
            Backend::Conventional(tools) => {
                let Some(t) = tools.iter().find(|t| t.descriptor().name == tool) else {
                    state.fail(tool, "UnknownTool", format!("no tool named {tool}"));
                    return Err(());
                };
                let started = Instant::now();
                let output = match t.call(&args) {
                    Ok(v) => v,
                    Err(e) => {
                        state.fail(tool, "ToolExecutionError", e.0);
                        return Err(());
                    }
                };
                let record = TraceRecord::tool_call(
                    0,
                    tool,
                    &args,
                    output.render_text(),
                    None,
                    started.elapsed(),
                    None,
                    state.counter,
                )
                .expect("no store, no dangling paths");
                state.push(record).then_some(Handle::Value(output)).ok_or(())
            }
            Backend::Mirrored(session) => {
                let name = session.config().mirrored_name(tool);
                let arg_text = args.summary_json();
                self.call_session(session, state, &name, &args)
                    .map(|result| match result {
                        ToolResult::Raw(v) => Handle::Value(v),
                        ToolResult::Stored(_) => {
                            // the agent only sees the instruction text
                            let text = result.text();
                            find_paths(&text)
                                .into_iter()
                                .find(|p| !arg_text.contains(&p.to_string()))
                                .map_or(Handle::None, |p| Handle::Path(p.base()))
                        }
                    })
            }
        }
    }

    fn call_session(
        &self,
        session: &ProxySession,
        state: &mut RunState<'_>,
        name: &str,
        args: &ArgumentTree,
    ) -> Result<ToolResult, ()> {
        let started = Instant::now();
        let result = match session.call_tool(name, args) {
            Ok(r) => r,
            Err(e) => {
                state.fail(name, e.kind(), e.to_string());
                return Err(());
            }
        };
        let record = TraceRecord::tool_call(
            0,
            name,
            args,
            result.text(),
            result.stored_path().map(ToString::to_string),
            started.elapsed(),
            Some(session.store()),
            state.counter,
        );
        match record {
            Ok(r) => state.push(r).then_some(result).ok_or(()),
            Err(e) => {
                state.fail(name, "DanglingPath", e.to_string());
                Err(())
            }
        }
    }

    /// Brings the value behind `slot` into view and returns its text.
    fn show(
        &self,
        backend: &Backend<'_>,
        state: &mut RunState<'_>,
        outputs: &HashMap<usize, Handle>,
        slot: &Slot,
    ) -> Result<String, ()> {
        let value = match self.fill(outputs, slot) {
            Ok(v) => v,
            Err(e) => {
                state.fail("answer", "PlanError", e);
                return Err(());
            }
        };
        let is_path = matches!(
            slot,
            Slot::FromStep { step, .. } if matches!(outputs.get(step), Some(Handle::Path(_)))
        );
        match backend {
            Backend::Mirrored(session) if is_path => {
                let args: ArgumentTree = [("memory_path".to_owned(), value)].into_iter().collect();
                self.call_session(session, state, FINAL_ANSWER_TOOL, &args)
                    .map(|r| r.text())
            }
            _ => Ok(value.render_text()),
        }
    }
}
