use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use hunkmark::evaluation::{evaluate, EvalCounts};
use hunkmark::llm::{OracleBackend, RetryPolicy};
use hunkmark::pipeline::{load_benchmark, run_benchmark, BenchmarkCase};
use hunkmark::taxonomy::{validate, LabelType};
use hunkmark::{run_pipeline, LabelerMode, LlmClient, PipelineOptions, PromptTemplates};

fn benchmark() -> Vec<BenchmarkCase> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/benchmark");
    load_benchmark(&root, 5).expect("benchmark fixtures load")
}

fn oracle(case: &BenchmarkCase) -> LlmClient {
    let truth = case.truth.clone().expect("fixture has ground truth");
    LlmClient::new(Arc::new(OracleBackend::new(truth)), RetryPolicy::no_delay(0))
}

#[test]
fn fixtures_cover_the_taxonomy() {
    let cases = benchmark();
    assert!(cases.len() >= 3);
    let hunks: usize = cases.iter().map(|c| c.bundle.hunk_count()).sum();
    assert!(hunks >= 20, "{hunks} hunks");

    let mut types = BTreeSet::new();
    let mut chains = 0;
    let mut moves = 0;
    let mut multi_rename = false;
    for case in &cases {
        let truth = case.truth.as_ref().unwrap();
        assert!(validate(truth).is_empty(), "{}: {:?}", case.name, validate(truth));
        types.extend(truth.instances.iter().map(|i| i.label_type));
        let by_id = truth.by_id();
        let roots: BTreeSet<u32> = truth
            .instances
            .iter()
            .filter(|i| i.parent_id != 0)
            .map(|i| i.parent_id)
            .collect();
        for root in roots {
            match by_id[&root].label_type {
                LabelType::Rename => chains += 1,
                LabelType::CodeMove => moves += 1,
                _ => {}
            }
        }
        for h in 1..=truth.hunk_count as u32 {
            let renames: usize = truth
                .on_hunk(h)
                .filter(|i| i.label_type == LabelType::Rename)
                .count();
            multi_rename |= renames >= 2;
        }
    }
    assert_eq!(types.len(), 12, "{types:?}");
    assert!(chains >= 2);
    assert!(moves >= 1);
    assert!(multi_rename);
}

#[test]
fn oracle_yields_all_ones_in_every_mode() {
    for case in benchmark() {
        let truth = case.truth.clone().unwrap();
        for mode in [LabelerMode::Hunk, LabelerMode::File, LabelerMode::Patch] {
            let opts = PipelineOptions { mode, workers: 4, skip_refiner: false };
            let out = run_pipeline(&case.bundle, &oracle(&case), &PromptTemplates::builtin(), opts).unwrap();
            assert!(validate(&out.refined).is_empty());
            let report = evaluate(&out.refined, &truth, out.run_info()).unwrap();
            for (name, value) in report.fractions() {
                assert_eq!(value, 1.0, "{} {mode}: {name}", case.name);
            }
            assert_eq!(out.refined, truth, "{} {mode}", case.name);
        }
    }
}

#[test]
fn pooled_benchmark_is_all_ones() {
    let cases = benchmark();
    // One oracle per case, so route through a per-case run and pool the counts.
    let mut pooled = None;
    for case in &cases {
        let result = run_benchmark(
            std::slice::from_ref(case),
            &oracle(case),
            &PromptTemplates::builtin(),
            PipelineOptions::default(),
            1,
        )
        .unwrap();
        let counts = result.cases[0].counts.clone().unwrap();
        match pooled.as_mut() {
            None => pooled = Some(counts),
            Some(p) => EvalCounts::merge(p, &counts),
        }
    }
    let pooled = pooled.unwrap();
    assert_eq!(pooled.patches, cases.len());
    let report = hunkmark::EvaluationReport::from_counts(&pooled).unwrap();
    assert!(report.fractions().iter().all(|(_, v)| *v == 1.0));
}
