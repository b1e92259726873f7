//! Deterministic stand-ins for the two evaluated workflows: synthetic tools,
//! a fixed-plan agent, and the experiment runner.

pub mod agent;
pub mod experiment;
pub mod grid;
pub mod sds;

pub use agent::{AgentRun, Backend, Mode, Plan, ScriptedAgent, Slot, Step};
pub use experiment::{replay_mirrored, run_experiment, run_once, ExperimentConfig, ExperimentName, ExperimentReport};
