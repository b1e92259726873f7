//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod support;

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};
use toolmem::harness::experiment::GRID_QUERY_SMILES;
use toolmem::harness::grid::{format_top_k, grid_values, GridSpec, SimilarityCorpus};
use toolmem::harness::{run_once, AgentRun, ExperimentConfig, ExperimentName, Mode};
use toolmem::StoredValue;

use support::*;

const CONTEXT_LIMIT_TOKENS: u64 = 1_000_000;
const MAX_RUN_TIME: Duration = Duration::from_secs(30);
const MIN_GRID_RATIO: f64 = 1_000.0;
const MIN_SDS_RATIO: f64 = 5.0;
const MIN_SDS_CHARS: usize = 30_000;
const MAX_TOKEN_DRIFT: u64 = 16;
const MIN_COUNTERFACTUAL_GROWTH: f64 = 60.0;
const PROPERTY_CASES: u32 = 1_000;
const CONCURRENT_CALLS: usize = 32;
const CORPUS_SIZE: usize = 100;
const SIMILARITY_TOLERANCE: f64 = 1e-6;
const EQUIVALENCE_SIDE: usize = 16;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn config(grid_side: usize) -> ExperimentConfig {
    ExperimentConfig {
        grid_side,
        context_limit_tokens: CONTEXT_LIMIT_TOKENS,
        ..ExperimentConfig::default()
    }
}

fn run(name: ExperimentName, mode: Mode, config: &ExperimentConfig) -> Result<AgentRun, String> {
    run_once(name, mode, config, 0).map_err(|e| e.to_string())
}

fn grid_overflow() -> Outcome {
    let out = Command::new(BIN)
        .args([
            "run-experiment",
            "grid",
            "--mode",
            "conventional",
            "--context-limit",
            "1000000",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(out.status.code() == Some(1), || {
        format!("conventional exit code {:?}", out.status.code())
    })?;
    ensure(
        stderr.trim().lines().count() == 1 && stderr.contains("step 1 (generate_molecule_grid): ContextOverflow"),
        || format!("diagnostic was {stderr:?}"),
    )?;

    let started = Instant::now();
    let mirrored = run(ExperimentName::Grid, Mode::Mirrored, &config(128))?;
    let elapsed = started.elapsed();
    let answer = mirrored.final_answer.ok_or("mirrored run has no final answer")?;
    let ranked = answer
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(i, l)| l.starts_with(&format!("{i}. SMILES: ")))
        .count();
    ensure(mirrored.report.completed && ranked == 10, || {
        format!("{ranked} ranked lines")
    })?;
    ensure(elapsed < MAX_RUN_TIME, || format!("mirrored run took {elapsed:?}"))?;
    Ok(format!(
        "conventional aborts with ContextOverflow; mirrored lists 10 SMILES in {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn token_ratios() -> Outcome {
    let grid = run(ExperimentName::Grid, Mode::Mirrored, &config(128))?.report;
    let grid_ratio = grid.total_tokens_counterfactual as f64 / grid.total_tokens_actual as f64;
    ensure(grid_ratio >= MIN_GRID_RATIO, || format!("grid ratio {grid_ratio:.1}"))?;

    let sds_config = config(16);
    let chars = sds_config.sds_document.chars().count();
    ensure(chars >= MIN_SDS_CHARS, || format!("document has {chars} chars"))?;
    let conventional = run(ExperimentName::Sds, Mode::Conventional, &sds_config)?.report;
    let mirrored = run(ExperimentName::Sds, Mode::Mirrored, &sds_config)?.report;
    ensure(conventional.completed && mirrored.completed, || {
        "an SDS run did not complete".into()
    })?;
    let sds_ratio = conventional.total_tokens_actual as f64 / mirrored.total_tokens_actual as f64;
    ensure(sds_ratio >= MIN_SDS_RATIO, || format!("sds ratio {sds_ratio:.2}"))?;
    Ok(format!(
        "grid counterfactual/actual = {} / {} = {grid_ratio:.0}x; sds conventional/mirrored = {} / {} = {sds_ratio:.1}x",
        grid.total_tokens_counterfactual, grid.total_tokens_actual, conventional.total_tokens_actual, mirrored.total_tokens_actual
    ))
}

fn payload_independence() -> Outcome {
    let small = run(ExperimentName::Grid, Mode::Mirrored, &config(32))?.report;
    let large = run(ExperimentName::Grid, Mode::Mirrored, &config(128))?.report;
    let drift = small.total_tokens_actual.abs_diff(large.total_tokens_actual);
    let growth = large.total_tokens_counterfactual as f64 / small.total_tokens_counterfactual as f64;
    ensure(drift <= MAX_TOKEN_DRIFT, || format!("tokens_actual drift {drift}"))?;
    ensure(growth >= MIN_COUNTERFACTUAL_GROWTH, || {
        format!("counterfactual growth {growth:.2}x")
    })?;
    Ok(format!(
        "actual {} -> {} (drift {drift}); counterfactual {} -> {} ({growth:.1}x)",
        small.total_tokens_actual,
        large.total_tokens_actual,
        small.total_tokens_counterfactual,
        large.total_tokens_counterfactual
    ))
}

fn golden_traces() -> Outcome {
    let fixed = ExperimentConfig {
        fixed_uuids: true,
        ..config(128)
    };
    let grid = run(ExperimentName::Grid, Mode::Mirrored, &fixed)?;
    ensure(grid.trace[1].result_text == golden_grid_instruction(), || {
        format!("grid instruction differs: {:?}", grid.trace[1].result_text)
    })?;
    ensure(grid.trace[2].result_text.starts_with(&golden_similar_prefix()), || {
        format!("similarity instruction differs: {:?}", grid.trace[2].result_text)
    })?;
    ensure(grid.trace[2].result_text == golden_similar_instruction(), || {
        "similarity instruction tail differs".into()
    })?;

    let sds = run(ExperimentName::Sds, Mode::Mirrored, &fixed)?;
    ensure(sds.trace[1].result_text == golden_tika_instruction(), || {
        format!("tika instruction differs: {:?}", sds.trace[1].result_text)
    })?;
    ensure(sds.trace[2].arguments_text == golden_extract_arguments(), || {
        "extract_sds arguments differ".into()
    })?;
    let answer: Value =
        serde_json::from_str(sds.final_answer.as_deref().unwrap_or("null")).map_err(|e| e.to_string())?;
    ensure(
        StoredValue::from(answer) == StoredValue::from(golden_sds_answer()),
        || "sds final value differs".into(),
    )?;
    Ok("grid, similarity and tika instructions match character for character; sds answer matches".into())
}

fn property<S: proptest::strategy::Strategy>(
    strategy: S,
    check: impl Fn(&S::Value) -> Result<(), String>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |v| {
            check(&v).map_err(proptest::test_runner::TestCaseError::fail)
        })
        .map_err(|e| e.to_string())
}

fn roundtrip() -> Outcome {
    property(stored_value(), check_roundtrip)?;
    let max = StoredValue::Binary(vec![0xa5; MAX_LARGE_BYTES]);
    check_roundtrip(&max)?;
    Ok(format!(
        "{PROPERTY_CASES} randomized values plus an 8 MiB payload round-trip bit-exactly"
    ))
}

fn resolution() -> Outcome {
    property(resolution_case(false), check_resolution)?;
    property(resolution_case(true), check_resolution)?;
    property(stored_value(), |v| {
        if !path_free(v) {
            return Ok(());
        }
        let store = toolmem::MemoryStore::new();
        let got = toolmem::path::resolve_arguments(v, &store).map_err(|e| e.to_string())?;
        ensure(got.bit_eq(v), || "path-free tree changed".into())
    })?;
    Ok(format!(
        "{} cases each: live-only replacement, DanglingPath, path-free identity",
        PROPERTY_CASES
    ))
}

fn protocol() -> Outcome {
    let mut peer = StdioPeer::proxy("grid", 16, &[]);
    peer.initialize();
    let listed = peer.call("tools/list", json!({}));
    let names: Vec<String> = listed["result"]["tools"]
        .as_array()
        .ok_or("tools/list returned no tools")?
        .iter()
        .filter_map(|t| t["name"].as_str().map(str::to_owned))
        .collect();
    ensure(
        names
            == [
                "generate_molecule_grid_mirrored",
                "retrieve_similar_molecules_mirrored",
                "retrieve_final_answer_from_memory",
            ],
        || format!("tools {names:?}"),
    )?;

    let args = json!({"molecule_description": GRID_QUERY_SMILES});
    let text = result_text(&peer.tool("generate_molecule_grid_mirrored", args.clone())).to_owned();
    let base = first_new_path(&text, &args.to_string()).ok_or("no path in grid instruction")?;
    let raw_grid = format!("{base}/raw_grid");
    let text =
        result_text(&peer.tool("retrieve_similar_molecules_mirrored", json!({ "raw_grid": raw_grid }))).to_owned();
    let stored = first_new_path(&text, &raw_grid).ok_or("no path in similarity instruction")?;
    let answer = peer.tool(
        "retrieve_final_answer_from_memory",
        json!({ "memory_path": stored.to_string() }),
    );
    ensure(result_text(&answer).lines().count() == 11, || {
        "final answer is not a top-10 listing".into()
    })?;

    let codes = [
        (peer.tool("nope", json!({})), -32001),
        (
            peer.tool("retrieve_final_answer_from_memory", json!({"memory_path": TIKA_PATH})),
            -32002,
        ),
        (
            peer.tool("retrieve_similar_molecules_mirrored", json!({"raw_grid": [0.5]})),
            -32003,
        ),
        (peer.call("nope/method", json!({})), -32601),
        (peer.call("tools/call", json!({})), -32602),
    ];
    for (response, code) in &codes {
        ensure(error_code(response) == Some(*code), || {
            format!("expected {code}, got {response}")
        })?;
    }
    peer.send_raw("{oops");
    ensure(error_code(&peer.recv()) == Some(-32700), || "parse error code".into())?;

    let mut capped_file = tempfile::NamedTempFile::new().map_err(|e| e.to_string())?;
    std::io::Write::write_all(&mut capped_file, b"store_capacity_bytes = 100\n").map_err(|e| e.to_string())?;
    let mut capped = StdioPeer::proxy("grid", 8, &["--config", capped_file.path().to_str().unwrap()]);
    capped.initialize();
    let r = capped.tool("generate_molecule_grid_mirrored", json!({"molecule_description": "C"}));
    ensure(error_code(&r) == Some(-32004), || format!("capacity: {r}"))?;

    let mut concurrent = StdioPeer::proxy("grid", 8, &[]);
    concurrent.initialize();
    for i in 0..CONCURRENT_CALLS {
        concurrent.send(
            "tools/call",
            json!({"name": "generate_molecule_grid_mirrored", "arguments": {"molecule_description": format!("C{i}")}}),
        );
    }
    let mut paths = HashSet::new();
    for _ in 0..CONCURRENT_CALLS {
        let r = concurrent.recv();
        if let Some(p) = first_new_path(result_text(&r), "") {
            paths.insert(p.to_string());
        }
    }
    ensure(paths.len() == CONCURRENT_CALLS, || {
        format!("{} distinct paths", paths.len())
    })?;
    for p in &paths {
        let got = concurrent.call("memory/get", json!({ "path": p }));
        ensure(got.get("result").is_some(), || format!("{p} not retrievable"))?;
    }
    Ok(format!(
        "tool list, grid call sequence, 7 error codes, {CONCURRENT_CALLS} concurrent distinct paths"
    ))
}

fn similarity_oracle() -> Outcome {
    let spec = GridSpec::new(16, 0);
    let corpus = SimilarityCorpus::bundled(spec);
    ensure(corpus.molecules().len() == CORPUS_SIZE, || "corpus size".into())?;
    let mut worst: f64 = 0.0;
    for query_smiles in [GRID_QUERY_SMILES, corpus.molecules()[17].as_str()] {
        let query = grid_values(query_smiles, spec);
        let ours = corpus.top_k(&query, CORPUS_SIZE).map_err(|e| e.to_string())?;
        let oracle = brute_force_top_k(query_smiles, corpus.molecules(), spec, CORPUS_SIZE);
        for (got, want) in ours.iter().zip(&oracle) {
            ensure(got.smiles == want.0, || format!("order differs at {}", got.smiles))?;
            worst = worst.max((got.score - want.1).abs());
        }
        let listing = format_top_k(&ours[..10]);
        ensure(listing.lines().count() == 11, || "listing".into())?;
    }
    ensure(worst <= SIMILARITY_TOLERANCE, || format!("max score error {worst:e}"))?;
    Ok(format!(
        "{CORPUS_SIZE}-molecule ranking identical, max score error {worst:.1e}"
    ))
}

fn mode_equivalence() -> Outcome {
    let config = config(EQUIVALENCE_SIDE);
    for name in [ExperimentName::Grid, ExperimentName::Sds] {
        let conventional = run(name, Mode::Conventional, &config)?;
        let mirrored = run(name, Mode::Mirrored, &config)?;
        ensure(conventional.report.completed, || {
            format!("{name} conventional did not complete")
        })?;
        ensure(
            conventional.final_answer.is_some() && conventional.final_answer == mirrored.final_answer,
            || format!("{name} answers differ"),
        )?;
    }
    Ok(format!(
        "grid and sds at {EQUIVALENCE_SIDE}^3 give identical final answers in both modes"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("grid overflow", grid_overflow),
        ("token ratios", token_ratios),
        ("payload independence", payload_independence),
        ("golden traces", golden_traces),
        ("lossless round-trip", roundtrip),
        ("resolution properties", resolution),
        ("protocol conformance", protocol),
        ("similarity oracle", similarity_oracle),
        ("mode equivalence", mode_equivalence),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
