//! The `label`, `refine`, `run`, `evaluate` and `benchmark` workflows.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use hunkmark::diff::parse_patch_with_dir;
use hunkmark::evaluation::{EvalCounts, EvaluationReport, RunInfo};
use hunkmark::labeler::{cost_per_hunk, CostPerHunk, LabelerRun};
use hunkmark::llm::{Backend, HttpBackend, OracleBackend, RetryPolicy, ScriptFile, ScriptedBackend, Usage};
use hunkmark::pipeline::{load_benchmark, load_ground_truth, BenchmarkCase};
use hunkmark::prompting::{labeler_requests, PromptRequest};
use hunkmark::refiner::{refiner_request, RefinementReport};
use hunkmark::taxonomy::{validate, LabelingSet};
use hunkmark::{run_labeler, run_pipeline, run_refiner, LlmClient, PatchBundle, PipelineOptions, PromptTemplates};

use crate::config::{BackendKind, RunConfig};

pub const LABELER_OUT: &str = "labeler.json";
pub const LABELER_REPORT: &str = "labeler_report.json";
pub const REFINED_OUT: &str = "refined.json";
pub const REFINEMENT_REPORT: &str = "refinement_report.json";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const EVALUATION_TEXT: &str = "evaluation.txt";
pub const PER_TYPE_CSV: &str = "per_type.csv";
pub const PROMPTS_DIR: &str = "prompts";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn write_set(path: &Path, set: &LabelingSet) -> Result<()> {
    let mut text = set.to_json()?;
    text.push('\n');
    write(path, &text)
}

fn templates(cfg: &RunConfig) -> Result<PromptTemplates> {
    match &cfg.templates_dir {
        Some(dir) => PromptTemplates::load_dir(dir).with_context(|| format!("templates in {}", dir.display())),
        None => Ok(PromptTemplates::builtin()),
    }
}

fn load_bundle(cfg: &RunConfig) -> Result<PatchBundle> {
    let path = cfg.diff.as_deref().ok_or_else(|| anyhow!("no diff given (use --diff)"))?;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read diff {}", path.display()))?;
    let bundle = parse_patch_with_dir(&text, cfg.files_dir.as_deref(), cfg.context_lines)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    if bundle.hunk_count() == 0 {
        bail!("{} contains no hunks", path.display());
    }
    Ok(bundle.with_source_meta(path.display().to_string()))
}

fn truth_for(cfg: &RunConfig, hunk_count: usize) -> Result<Option<LabelingSet>> {
    cfg.ground_truth
        .as_deref()
        .map(|p| load_ground_truth(p, hunk_count).with_context(|| format!("ground truth {}", p.display())))
        .transpose()
}

/// The configured backend wrapped in a retrying client. `truth` feeds the oracle.
pub fn build_client(cfg: &RunConfig, truth: Option<&LabelingSet>) -> Result<LlmClient> {
    let backend: Arc<dyn Backend> = match cfg.backend {
        BackendKind::Http => Arc::new(HttpBackend::new(cfg.http.clone())?),
        BackendKind::Oracle => {
            let truth = truth.ok_or_else(|| anyhow!("the oracle backend needs --ground-truth"))?;
            Arc::new(OracleBackend::new(truth.clone()))
        }
        BackendKind::Scripted => {
            let path = cfg.script.as_deref().ok_or_else(|| anyhow!("the scripted backend needs --script"))?;
            Arc::new(ScriptedBackend::from_script(ScriptFile::load(path)?))
        }
    };
    let retry = match cfg.backend {
        BackendKind::Http => cfg.http.retry_policy(),
        _ => RetryPolicy::no_delay(0),
    };
    Ok(LlmClient::new(backend, retry))
}

fn prompt_file_name(req: &PromptRequest) -> String {
    let safe: String = req
        .key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.txt")
}

fn write_prompts(out: &Path, requests: &[PromptRequest]) -> Result<Vec<PathBuf>> {
    let dir = out.join(PROMPTS_DIR);
    let mut written = Vec::new();
    for req in requests {
        let path = dir.join(prompt_file_name(req));
        write(&path, &req.text)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct LabelerReport<'a> {
    backend: &'a str,
    hunks: usize,
    cost_per_hunk: Option<CostPerHunk>,
    #[serde(flatten)]
    run: &'a LabelerRun,
}

fn write_labeler_outputs(cfg: &RunConfig, client: &LlmClient, n: usize, set: &LabelingSet, run: &LabelerRun) -> Result<()> {
    write_set(&cfg.out.join(LABELER_OUT), set)?;
    write_json(
        &cfg.out.join(LABELER_REPORT),
        &LabelerReport {
            backend: client.backend_name(),
            hunks: n,
            cost_per_hunk: cost_per_hunk(run, n),
            run,
        },
    )
}

fn summarize_labeler(set: &LabelingSet, run: &LabelerRun) {
    println!(
        "labeler ({} mode): {} instance(s) on {} hunk(s), {} request(s), {} failure(s), {} warning(s)",
        run.mode,
        set.instances.len(),
        set.hunk_count,
        run.requests,
        run.failures.len(),
        run.warnings.len()
    );
}

fn summarize_refiner(set: &LabelingSet, report: &RefinementReport) {
    if report.skipped {
        println!("refiner: skipped ({})", report.warnings.join("; "));
    } else {
        println!(
            "refiner: {} instance(s), {} type change(s), {} split(s), {} parent repair(s)",
            set.instances.len(),
            report.type_changes.len(),
            report.splits.len(),
            report.repaired_parents.len()
        );
    }
}

/// Stage one only: label the hunks of `--diff`.
pub fn cmd_label(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let templates = templates(cfg)?;
    if cfg.dry_run {
        let reqs = labeler_requests(&templates, cfg.mode, &bundle)?;
        let written = write_prompts(&cfg.out, &reqs)?;
        println!("dry run: wrote {} prompt(s) to {}", written.len(), cfg.out.join(PROMPTS_DIR).display());
        return Ok(());
    }
    let truth = truth_for(cfg, bundle.hunk_count())?;
    let client = build_client(cfg, truth.as_ref())?;
    let (set, run) = run_labeler(&bundle, cfg.mode, &client, &templates, cfg.parallel)?;
    write_labeler_outputs(cfg, &client, bundle.hunk_count(), &set, &run)?;
    summarize_labeler(&set, &run);
    Ok(())
}

fn labeler_output_path(cfg: &RunConfig) -> PathBuf {
    cfg.labeler_output.clone().unwrap_or_else(|| cfg.out.join(LABELER_OUT))
}

/// Load a labeling set written by `label` (or any file in that format).
pub fn load_labeling(path: &Path, hunk_count: usize) -> Result<LabelingSet> {
    load_ground_truth(path, hunk_count).with_context(|| format!("labeling {}", path.display()))
}

/// Stage two only: refine an existing labeler output.
pub fn cmd_refine(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let templates = templates(cfg)?;
    let input = labeler_output_path(cfg);
    if !input.is_file() {
        bail!("labeler output {} not found (run `label` first or pass --labeler-output)", input.display());
    }
    let labeled = load_labeling(&input, bundle.hunk_count())?;
    if cfg.dry_run {
        match refiner_request(&bundle, &labeled, &templates)? {
            Some(req) => {
                write_prompts(&cfg.out, std::slice::from_ref(&req))?;
                println!("dry run: wrote refiner prompt to {}", cfg.out.join(PROMPTS_DIR).display());
            }
            None => println!("dry run: nothing to refine"),
        }
        return Ok(());
    }
    let truth = truth_for(cfg, bundle.hunk_count())?;
    let client = build_client(cfg, truth.as_ref())?;
    let (refined, report) = run_refiner(&bundle, &labeled, &client, &templates)?;
    write_set(&cfg.out.join(REFINED_OUT), &refined)?;
    write_json(&cfg.out.join(REFINEMENT_REPORT), &report)?;
    summarize_refiner(&refined, &report);
    Ok(())
}

fn write_evaluation(out: &Path, report: &EvaluationReport) -> Result<()> {
    write(&out.join(EVALUATION_JSON), &(report.to_json()? + "\n"))?;
    write(&out.join(EVALUATION_TEXT), &report.to_text())?;
    write(&out.join(PER_TYPE_CSV), &report.per_type_csv())
}

/// Label, refine and, with `--ground-truth`, evaluate in one go.
pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let templates = templates(cfg)?;
    if cfg.dry_run {
        // The refiner prompt depends on labeler output, so only stage one can be previewed.
        let reqs = labeler_requests(&templates, cfg.mode, &bundle)?;
        let written = write_prompts(&cfg.out, &reqs)?;
        println!(
            "dry run: wrote {} labeler prompt(s) to {}",
            written.len(),
            cfg.out.join(PROMPTS_DIR).display()
        );
        return Ok(());
    }
    let truth = truth_for(cfg, bundle.hunk_count())?;
    let client = build_client(cfg, truth.as_ref())?;
    let opts = PipelineOptions {
        mode: cfg.mode,
        workers: cfg.parallel,
        skip_refiner: cfg.skip_refiner,
    };
    let out = run_pipeline(&bundle, &client, &templates, opts)?;
    write_labeler_outputs(cfg, &client, bundle.hunk_count(), &out.labeled, &out.labeler_run)?;
    write_set(&cfg.out.join(REFINED_OUT), &out.refined)?;
    write_json(&cfg.out.join(REFINEMENT_REPORT), &out.refinement)?;
    summarize_labeler(&out.labeled, &out.labeler_run);
    summarize_refiner(&out.refined, &out.refinement);

    if let Some(truth) = &truth {
        let report = hunkmark::evaluate(&out.refined, truth, out.run_info())?;
        write_evaluation(&cfg.out, &report)?;
        print!("\n{}", report.to_text());
    }
    Ok(())
}

/// Hunk count for `evaluate`: from the diff if given, else declared by the ground truth.
fn evaluation_domain(cfg: &RunConfig, truth_path: &Path) -> Result<usize> {
    if cfg.diff.is_some() {
        return Ok(load_bundle(cfg)?.hunk_count());
    }
    let text = fs::read_to_string(truth_path).with_context(|| format!("cannot read {}", truth_path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", truth_path.display()))?;
    value
        .get("hunk_count")
        .and_then(|v| v.as_u64())
        .map(|n| n as usize)
        .ok_or_else(|| anyhow!("{} does not state hunk_count; pass --diff", truth_path.display()))
}

/// Token usage from the `labeler_report.json` written next to a labeler output, if any.
fn sibling_usage(labeler_output: &Path) -> Result<Option<Usage>> {
    let Some(path) = labeler_output.parent().map(|d| d.join(LABELER_REPORT)) else {
        return Ok(None);
    };
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    match value.get("usage") {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(u) => Ok(Some(
            serde_json::from_value(u.clone()).with_context(|| format!("bad usage in {}", path.display()))?,
        )),
    }
}

/// Score predictions against ground truth.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let truth_path = cfg.ground_truth.as_deref().ok_or_else(|| anyhow!("evaluate needs --ground-truth"))?;
    let pred_path = cfg.predictions.clone().unwrap_or_else(|| cfg.out.join(REFINED_OUT));
    let n = evaluation_domain(cfg, truth_path)?;
    let truth = load_labeling(truth_path, n)?;
    let pred = load_labeling(&pred_path, n)?;
    let labeler = cfg.labeler_output.as_deref().map(|p| load_labeling(p, n)).transpose()?;
    let labeler_usage = cfg.labeler_output.as_deref().map(sibling_usage).transpose()?.flatten();
    let info = RunInfo {
        labeler_set: labeler.as_ref(),
        labeler_usage,
        refiner_usage: None,
    };
    let report = hunkmark::evaluate(&pred, &truth, info)?;
    write_evaluation(&cfg.out, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchmarkSummary {
    cases: Vec<String>,
    pooled: EvaluationReport,
}

fn run_case(cfg: &RunConfig, templates: &PromptTemplates, case: &BenchmarkCase) -> Result<Option<EvalCounts>> {
    let client = build_client(cfg, case.truth.as_ref())?;
    let opts = PipelineOptions {
        mode: cfg.mode,
        workers: cfg.parallel,
        skip_refiner: cfg.skip_refiner,
    };
    let out = run_pipeline(&case.bundle, &client, templates, opts).with_context(|| format!("case {}", case.name))?;
    let dir = cfg.out.join(&case.name);
    write_set(&dir.join(LABELER_OUT), &out.labeled)?;
    write_set(&dir.join(REFINED_OUT), &out.refined)?;
    write_json(&dir.join(REFINEMENT_REPORT), &out.refinement)?;
    let Some(truth) = &case.truth else {
        return Ok(None);
    };
    let counts = EvalCounts::collect(&out.refined, truth, out.run_info())?;
    write_evaluation(&dir, &EvaluationReport::from_counts(&counts)?)?;
    Ok(Some(counts))
}

/// Run every case directory under `root` and pool the scores.
pub fn cmd_benchmark(cfg: &RunConfig, root: &Path) -> Result<()> {
    let cases = load_benchmark(root, cfg.context_lines)?;
    if cases.is_empty() {
        bail!("no benchmark cases under {}", root.display());
    }
    let templates = templates(cfg)?;
    let mut pooled: Option<EvalCounts> = None;
    let mut names = Vec::new();
    for case in &cases {
        if let Some(counts) = run_case(cfg, &templates, case)? {
            names.push(case.name.clone());
            match pooled.as_mut() {
                Some(p) => p.merge(&counts),
                None => pooled = Some(counts),
            }
        }
        println!("{}: done", case.name);
    }
    let Some(pooled) = pooled else {
        println!("no case has ground truth; nothing to score");
        return Ok(());
    };
    let report = EvaluationReport::from_counts(&pooled)?;
    write_evaluation(&cfg.out, &report)?;
    write_json(&cfg.out.join("benchmark.json"), &BenchmarkSummary { cases: names, pooled: report.clone() })?;
    print!("\n{}", report.to_text());
    Ok(())
}

/// Fail unless `path` holds a structurally valid labeling for `hunk_count` hunks.
pub fn check_labeling_file(path: &Path, hunk_count: usize) -> Result<LabelingSet> {
    let set = load_labeling(path, hunk_count)?;
    let problems = validate(&set);
    if !problems.is_empty() {
        bail!("{}: {} violation(s)", path.display(), problems.len());
    }
    Ok(set)
}
