//! The two replayed workflows and their metrics.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;
use uuid::{uuid, Uuid};

use super::agent::{AgentRun, Backend, Mode, Plan, ScriptedAgent, Slot, Step, DEFAULT_CONTEXT_LIMIT_TOKENS};
use super::grid::{grid_tools, GridSpec, SimilarityCorpus, DEFAULT_TOP_K, GRID_SIDE, GRID_TOOL, SIMILARITY_TOOL};
use super::sds::{
    pad_document, sds_tools, DEFAULT_DOCUMENT_CHARS, DEFAULT_DOCUMENT_NAME, EXTRACT_TOOL, TIKA_TOOL, TITANIUM_FIXTURE,
};
use crate::ledger::BytesPerToken;
use crate::ledger::{Report, TokenCounter};
use crate::memory::{IdGenerator, MemoryStore, ScriptedIds};
use crate::mirror::{MirrorConfig, Tool};
use crate::proxy::{ProxyError, ProxySession};

pub const GRID_QUERY_SMILES: &str = "OC12COC3=NCC1C23";
/// Threshold used by the harness. Low enough that the ingredient summary of
/// a one-component sheet is stored too.
pub const HARNESS_THRESHOLD_BYTES: u64 = 64;

pub const GRID_FIXED_UUIDS: [Uuid; 2] = [
    uuid!("fcb87ffa-31b7-41b0-bf90-76d0c87000f5"),
    uuid!("30daddd0-d4a1-4689-bc78-32eb93b16252"),
];
pub const SDS_FIXED_UUIDS: [Uuid; 2] = [
    uuid!("d719493f-b573-4dc2-b15c-6d031f64b7af"),
    uuid!("3bec235a-8bb3-4e1f-b049-029c655f54f1"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentName {
    Grid,
    Sds,
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentName::Grid => "grid",
            ExperimentName::Sds => "sds",
        })
    }
}

impl FromStr for ExperimentName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(ExperimentName::Grid),
            "sds" => Ok(ExperimentName::Sds),
            other => Err(format!("unknown experiment {other:?}")),
        }
    }
}

#[derive(Clone)]
pub struct ExperimentConfig {
    pub grid_side: usize,
    /// Seeds grid generation and, per run, the UUID stream.
    pub seed: u64,
    pub context_limit_tokens: u64,
    pub threshold_bytes: u64,
    pub counter: Arc<dyn TokenCounter>,
    pub runs: usize,
    /// Hand out the recorded UUIDs first, so instructions match the recorded traces.
    pub fixed_uuids: bool,
    pub store_capacity_bytes: Option<u64>,
    pub smiles: String,
    /// `None` uses the bundled corpus.
    pub corpus: Option<Vec<String>>,
    pub k: usize,
    pub sds_document: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid_side: GRID_SIDE,
            seed: 0,
            context_limit_tokens: DEFAULT_CONTEXT_LIMIT_TOKENS,
            threshold_bytes: HARNESS_THRESHOLD_BYTES,
            counter: Arc::new(BytesPerToken::default()),
            runs: 1,
            fixed_uuids: false,
            store_capacity_bytes: None,
            smiles: GRID_QUERY_SMILES.to_owned(),
            corpus: None,
            k: DEFAULT_TOP_K,
            sds_document: default_sds_document(),
        }
    }
}

/// The titanium dioxide sheet padded to 30,000 characters.
pub fn default_sds_document() -> String {
    pad_document(TITANIUM_FIXTURE, DEFAULT_DOCUMENT_CHARS)
}

impl ExperimentConfig {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.grid_side, self.seed)
    }

    fn corpus(&self) -> SimilarityCorpus {
        let spec = self.grid_spec();
        match &self.corpus {
            Some(molecules) => SimilarityCorpus::new(molecules.clone(), spec, self.k),
            None => {
                let bundled = SimilarityCorpus::bundled(spec);
                SimilarityCorpus::new(bundled.molecules().to_vec(), spec, self.k)
            }
        }
    }

    pub fn tools(&self, name: ExperimentName) -> Vec<Arc<dyn Tool>> {
        match name {
            ExperimentName::Grid => grid_tools(self.grid_spec(), Arc::new(self.corpus())),
            ExperimentName::Sds => sds_tools(self.sds_document.clone()),
        }
    }

    pub fn plan(&self, name: ExperimentName) -> Plan {
        match name {
            ExperimentName::Grid => grid_plan(&self.smiles),
            ExperimentName::Sds => sds_plan(DEFAULT_DOCUMENT_NAME),
        }
    }

    fn ids(&self, name: ExperimentName, run: usize) -> Box<dyn IdGenerator> {
        let fixed: &[Uuid] = match (self.fixed_uuids, name) {
            (false, _) => &[],
            (true, ExperimentName::Grid) => &GRID_FIXED_UUIDS,
            (true, ExperimentName::Sds) => &SDS_FIXED_UUIDS,
        };
        Box::new(ScriptedIds::new(
            fixed.iter().copied(),
            self.seed.wrapping_add(run as u64),
        ))
    }

    /// A fresh proxy session over `tools`, as used by mirrored runs.
    pub fn session(
        &self,
        name: ExperimentName,
        tools: &[Arc<dyn Tool>],
        run: usize,
    ) -> Result<ProxySession, ProxyError> {
        let store = MemoryStore::new()
            .with_capacity(self.store_capacity_bytes)
            .with_boxed_ids(self.ids(name, run));
        let mut session = ProxySession::new(MirrorConfig::with_threshold(self.threshold_bytes), store)
            .with_counter(Arc::clone(&self.counter));
        session.register_all(tools.iter().cloned())?;
        Ok(session)
    }
}

pub fn grid_plan(smiles: &str) -> Plan {
    Plan {
        user_prompt: format!(
            "For the molecule in the grid, with SMILES {smiles}, what are the most similar molecules to it?"
        ),
        steps: vec![
            Step::Call {
                tool: GRID_TOOL.into(),
                args: vec![("molecule_description".into(), Slot::literal(smiles))],
            },
            Step::Call {
                tool: SIMILARITY_TOOL.into(),
                args: vec![("raw_grid".into(), Slot::key(0, "raw_grid"))],
            },
            Step::Answer(Slot::output(1)),
        ],
    }
}

pub fn sds_plan(pdf_path: &str) -> Plan {
    Plan {
        user_prompt: format!(
            "What are the ingredients of the product contained in the PDF file at '{pdf_path}'? \
             Describe the name, chemical formula and CAS number of ingredients, if any."
        ),
        steps: vec![
            Step::Call {
                tool: TIKA_TOOL.into(),
                args: vec![("pdf_path".into(), Slot::literal(pdf_path))],
            },
            Step::Call {
                tool: EXTRACT_TOOL.into(),
                args: vec![("content".into(), Slot::output(0))],
            },
            Step::Inspect(Slot::key(1, "ingredients")),
            Step::Answer(Slot::output(1)),
        ],
    }
}

/// One run with freshly built tools.
pub fn run_once(
    name: ExperimentName,
    mode: Mode,
    config: &ExperimentConfig,
    run: usize,
) -> Result<AgentRun, ProxyError> {
    run_with_tools(name, mode, config, &config.tools(name), run)
}

/// A mirrored run that hands back its session, memory included.
pub fn replay_mirrored(
    name: ExperimentName,
    config: &ExperimentConfig,
) -> Result<(ProxySession, AgentRun), ProxyError> {
    let tools = config.tools(name);
    let session = config.session(name, &tools, 0)?;
    let agent = ScriptedAgent::new(
        config.plan(name),
        config.context_limit_tokens,
        Arc::clone(&config.counter),
    );
    let run = agent.run(Backend::Mirrored(&session));
    Ok((session, run))
}

fn run_with_tools(
    name: ExperimentName,
    mode: Mode,
    config: &ExperimentConfig,
    tools: &[Arc<dyn Tool>],
    run: usize,
) -> Result<AgentRun, ProxyError> {
    let agent = ScriptedAgent::new(
        config.plan(name),
        config.context_limit_tokens,
        Arc::clone(&config.counter),
    );
    Ok(match mode {
        Mode::Conventional => agent.run(Backend::Conventional(tools)),
        Mode::Mirrored => {
            let session = config.session(name, tools, run)?;
            agent.run(Backend::Mirrored(&session))
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentName,
    pub mode: Mode,
    pub grid_side: usize,
    pub seed: u64,
    pub counter: String,
    pub context_limit_tokens: u64,
    pub runs: Vec<Report>,
    pub completed_runs: usize,
    pub mean_tokens_actual: f64,
    pub mean_tokens_counterfactual: f64,
    pub mean_wall_time_ms: f64,
    /// Final answer of the first completed run.
    pub final_answer: Option<String>,
}

impl ExperimentReport {
    pub fn all_completed(&self) -> bool {
        self.completed_runs == self.runs.len()
    }
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Replays the workflow `config.runs` times, each with an isolated session.
pub fn run_experiment(
    name: ExperimentName,
    mode: Mode,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, ProxyError> {
    let tools = config.tools(name);
    let mut runs = Vec::with_capacity(config.runs);
    let mut final_answer = None;
    for run in 0..config.runs {
        let outcome = run_with_tools(name, mode, config, &tools, run)?;
        tracing::info!(
            experiment = %name,
            %mode,
            run,
            completed = outcome.report.completed,
            tokens = outcome.report.total_tokens_actual,
            "run finished"
        );
        if final_answer.is_none() {
            final_answer = outcome.final_answer;
        }
        runs.push(outcome.report);
    }
    let n = runs.len();
    Ok(ExperimentReport {
        experiment: name,
        mode,
        grid_side: config.grid_side,
        seed: config.seed,
        counter: config.counter.scheme().to_owned(),
        context_limit_tokens: config.context_limit_tokens,
        completed_runs: runs.iter().filter(|r| r.completed).count(),
        mean_tokens_actual: mean(runs.iter().map(|r| r.total_tokens_actual as f64), n),
        mean_tokens_counterfactual: mean(runs.iter().map(|r| r.total_tokens_counterfactual as f64), n),
        mean_wall_time_ms: mean(runs.iter().map(|r| r.wall_time_ms), n),
        runs,
        final_answer,
    })
}
