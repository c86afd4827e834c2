//! Both stages wired together, plus benchmark cases on disk and a batch runner.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{parse_patch_with_dir, DiffError, PatchBundle};
use crate::evaluation::{EvalCounts, EvalError, EvaluationReport, RunInfo};
use crate::labeler::{run_labeler, LabelerError, LabelerRun};
use crate::llm::LlmClient;
use crate::par::map_ordered;
use crate::prompting::{LabelerMode, PromptTemplates};
use crate::refiner::{run_refiner, RefinementReport, RefinerError};
use crate::taxonomy::{validate, LabelingInstance, LabelingSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("labeler: {0}")]
    Labeler(#[from] LabelerError),
    #[error("refiner: {0}")]
    Refiner(#[from] RefinerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub mode: LabelerMode,
    /// Upper bound on concurrent labeler requests.
    pub workers: usize,
    pub skip_refiner: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            mode: LabelerMode::File,
            workers: 1,
            skip_refiner: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub labeled: LabelingSet,
    pub labeler_run: LabelerRun,
    pub refined: LabelingSet,
    pub refinement: RefinementReport,
}

impl PipelineOutput {
    pub fn run_info(&self) -> RunInfo<'_> {
        RunInfo {
            labeler_set: Some(&self.labeled),
            labeler_usage: Some(self.labeler_run.usage),
            refiner_usage: self.refinement.usage,
        }
    }
}

/// Label, then refine unless told not to.
pub fn run_pipeline(
    bundle: &PatchBundle,
    client: &LlmClient,
    templates: &PromptTemplates,
    opts: PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let (labeled, labeler_run) = run_labeler(bundle, opts.mode, client, templates, opts.workers)?;
    let (refined, refinement) = if opts.skip_refiner {
        (
            labeled.clone(),
            RefinementReport {
                skipped: true,
                warnings: vec!["refiner disabled".into()],
                ..Default::default()
            },
        )
    } else {
        run_refiner(bundle, &labeled, client, templates)?
    };
    Ok(PipelineOutput {
        labeled,
        labeler_run,
        refined,
        refinement,
    })
}

/// Ground-truth file: a bare instance array, or an object that also states
/// the hunk count it was annotated against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TruthFile {
    Bare(Vec<LabelingInstance>),
    Full {
        hunk_count: usize,
        #[serde(default)]
        patch: Option<String>,
        instances: Vec<LabelingInstance>,
    },
}

/// Read a ground-truth file for a patch with `hunk_count` hunks.
pub fn load_ground_truth(path: &Path, hunk_count: usize) -> Result<LabelingSet, PipelineError> {
    let input_err = |reason: String| PipelineError::Input { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path).map_err(|e| input_err(e.to_string()))?;
    let file: TruthFile = serde_json::from_str(&text).map_err(|e| input_err(format!("not a labeling set: {e}")))?;
    let instances = match file {
        TruthFile::Bare(instances) => instances,
        TruthFile::Full { hunk_count: declared, instances, .. } => {
            if declared != hunk_count {
                return Err(EvalError::DomainMismatch { predicted: hunk_count, truth: declared }.into());
            }
            instances
        }
    };
    let set = LabelingSet::from_instances(hunk_count, instances);
    let problems = validate(&set);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|v| v.to_string()).collect();
        return Err(input_err(format!("invalid labeling: {}", list.join("; "))));
    }
    Ok(set)
}

/// Serialize a ground-truth style file (`{hunk_count, instances}`).
pub fn ground_truth_json(set: &LabelingSet, patch: Option<&str>) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&TruthFile::Full {
        hunk_count: set.hunk_count,
        patch: patch.map(str::to_string),
        instances: set.instances.clone(),
    })
}

pub const CASE_DIFF: &str = "patch.diff";
pub const CASE_FILES: &str = "files";
pub const CASE_TRUTH: &str = "ground_truth.json";

/// One benchmark patch: `patch.diff`, optional `files/{old,new}/` trees and
/// optional `ground_truth.json`.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub name: String,
    pub bundle: PatchBundle,
    pub truth: Option<LabelingSet>,
}

pub fn load_case(dir: &Path, context_width: usize) -> Result<BenchmarkCase, PipelineError> {
    let diff_path = dir.join(CASE_DIFF);
    let text = fs::read_to_string(&diff_path).map_err(|e| PipelineError::Input {
        path: diff_path.clone(),
        reason: e.to_string(),
    })?;
    let files = dir.join(CASE_FILES);
    let files = files.is_dir().then_some(files);
    let bundle = parse_patch_with_dir(&text, files.as_deref(), context_width)?
        .with_source_meta(dir.display().to_string());
    let truth_path = dir.join(CASE_TRUTH);
    let truth = if truth_path.exists() {
        Some(load_ground_truth(&truth_path, bundle.hunk_count())?)
    } else {
        None
    };
    Ok(BenchmarkCase {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        bundle,
        truth,
    })
}

/// Every case directory directly under `root`, sorted by name.
pub fn load_benchmark(root: &Path, context_width: usize) -> Result<Vec<BenchmarkCase>, PipelineError> {
    let entries = fs::read_dir(root).map_err(|e| PipelineError::Input {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(CASE_DIFF).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_case(d, context_width)).collect()
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub output: PipelineOutput,
    pub report: Option<EvaluationReport>,
    pub counts: Option<EvalCounts>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub cases: Vec<CaseResult>,
    /// All cases with ground truth, pooled hunk by hunk.
    pub pooled: Option<EvaluationReport>,
}

fn run_case(
    case: &BenchmarkCase,
    client: &LlmClient,
    templates: &PromptTemplates,
    opts: PipelineOptions,
) -> Result<CaseResult, PipelineError> {
    let output = run_pipeline(&case.bundle, client, templates, opts)?;
    let counts = match &case.truth {
        Some(truth) => Some(EvalCounts::collect(&output.refined, truth, output.run_info())?),
        None => None,
    };
    let report = counts.as_ref().map(EvaluationReport::from_counts).transpose()?;
    Ok(CaseResult {
        name: case.name.clone(),
        output,
        report,
        counts,
    })
}

/// Run the pipeline over many cases, up to `case_workers` at a time.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
    client: &LlmClient,
    templates: &PromptTemplates,
    opts: PipelineOptions,
    case_workers: usize,
) -> Result<BenchmarkResult, PipelineError> {
    let results = map_ordered(cases, case_workers, |case| run_case(case, client, templates, opts));
    let cases: Vec<CaseResult> = results.into_iter().collect::<Result<_, _>>()?;
    let mut pooled: Option<EvalCounts> = None;
    for c in cases.iter().filter_map(|c| c.counts.as_ref()) {
        match pooled.as_mut() {
            Some(p) => p.merge(c),
            None => pooled = Some(c.clone()),
        }
    }
    let pooled = pooled.as_ref().map(EvaluationReport::from_counts).transpose()?;
    Ok(BenchmarkResult { cases, pooled })
}
