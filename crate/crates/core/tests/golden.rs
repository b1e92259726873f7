mod support;

use serde_json::Value;
use toolmem::harness::{run_once, ExperimentConfig, ExperimentName, Mode};
use toolmem::StoredValue;

use support::*;

fn fixed(grid_side: usize) -> ExperimentConfig {
    ExperimentConfig {
        grid_side,
        fixed_uuids: true,
        ..ExperimentConfig::default()
    }
}

#[test]
fn grid_instructions_match_recording() {
    let run = run_once(ExperimentName::Grid, Mode::Mirrored, &fixed(16), 0).unwrap();
    let tools: Vec<&str> = run.trace.iter().map(|r| r.tool.as_str()).collect();
    assert_eq!(
        tools,
        [
            "prompt",
            "generate_molecule_grid_mirrored",
            "retrieve_similar_molecules_mirrored",
            "retrieve_final_answer_from_memory",
            "final_answer"
        ]
    );
    assert_eq!(
        run.trace[1].arguments_text,
        "{\"molecule_description\": \"OC12COC3=NCC1C23\"}"
    );
    assert_eq!(run.trace[1].result_text, golden_grid_instruction());
    assert_eq!(run.trace[2].result_text, golden_similar_instruction());
    assert!(run.trace[2].result_text.starts_with(&golden_similar_prefix()));
    assert_eq!(
        run.trace[3].arguments_text,
        format!("{{\"memory_path\": \"{SIMILAR_PATH}\"}}")
    );
}

#[test]
fn sds_instructions_match_recording() {
    let run = run_once(ExperimentName::Sds, Mode::Mirrored, &fixed(16), 0).unwrap();
    assert_eq!(run.trace[1].tool, "tika_mirrored");
    assert_eq!(run.trace[1].result_text, golden_tika_instruction());
    assert_eq!(run.trace[2].tool, "extract_sds_mirrored");
    assert_eq!(run.trace[2].arguments_text, golden_extract_arguments());
    assert!(run.trace[2]
        .result_text
        .contains(&format!("is currently stored at {EXTRACT_PATH}.")));
    assert_eq!(
        run.trace[3].arguments_text,
        format!("{{\"memory_path\": \"{EXTRACT_PATH}/ingredients\"}}")
    );
    assert_eq!(
        run.trace[4].arguments_text,
        format!("{{\"memory_path\": \"{EXTRACT_PATH}\"}}")
    );
    let answer: Value = serde_json::from_str(run.final_answer.as_deref().unwrap()).unwrap();
    assert_eq!(StoredValue::from(answer), StoredValue::from(golden_sds_answer()));
}

#[test]
fn fixed_seed_runs_are_byte_reproducible() {
    for name in [ExperimentName::Grid, ExperimentName::Sds] {
        let a = run_once(name, Mode::Mirrored, &fixed(8), 0).unwrap();
        let b = run_once(name, Mode::Mirrored, &fixed(8), 0).unwrap();
        let texts = |r: &toolmem::harness::AgentRun| {
            r.trace
                .iter()
                .map(|t| (t.arguments_text.clone(), t.result_text.clone(), t.tokens_actual))
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(&a), texts(&b));
    }
}
