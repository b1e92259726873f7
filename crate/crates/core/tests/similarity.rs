mod support;

use toolmem::harness::experiment::GRID_QUERY_SMILES;
use toolmem::harness::grid::{format_top_k, grid_values, GridSpec, SimilarityCorpus};

use support::brute_force_top_k;

const TOLERANCE: f64 = 1e-6;

fn compare(query_smiles: &str, spec: GridSpec) {
    let corpus = SimilarityCorpus::bundled(spec);
    assert_eq!(corpus.molecules().len(), 100);
    let query = grid_values(query_smiles, spec);
    let ours = corpus.top_k(&query, 100).unwrap();
    let oracle = brute_force_top_k(query_smiles, corpus.molecules(), spec, 100);
    for (rank, (got, want)) in ours.iter().zip(&oracle).enumerate() {
        assert_eq!(got.smiles, want.0, "rank {}", rank + 1);
        assert!(
            (got.score - want.1).abs() <= TOLERANCE,
            "rank {}: {} vs {}",
            rank + 1,
            got.score,
            want.1
        );
    }
}

#[test]
fn matches_brute_force_for_outside_query() {
    compare(GRID_QUERY_SMILES, GridSpec::new(12, 0));
    compare(GRID_QUERY_SMILES, GridSpec::new(16, 7));
}

#[test]
fn matches_brute_force_for_corpus_member() {
    let member = SimilarityCorpus::bundled(GridSpec::new(8, 0)).molecules()[63].clone();
    compare(&member, GridSpec::new(8, 0));
}

#[test]
fn top_ten_listing_has_ten_ranked_lines() {
    let spec = GridSpec::new(8, 0);
    let corpus = SimilarityCorpus::bundled(spec);
    let hits = corpus.top_k(&grid_values(GRID_QUERY_SMILES, spec), 10).unwrap();
    let text = format_top_k(&hits);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Top-K similar samples:");
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{}. SMILES: ", i + 1)), "{line}");
        assert!(line.contains(" | Score: "));
    }
    assert_eq!(lines.len(), 11);
}
