//! Stage one: ask the model for the label types of every hunk.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::PatchBundle;
use crate::llm::{parse_labeler_reply, BackendError, LlmClient, ReplyWarning, Usage};
use crate::par::map_ordered;
use crate::prompting::{labeler_requests, LabelerMode, PromptError, PromptRequest, PromptTemplates};
use crate::taxonomy::{set_from_types, LabelType, LabelingSet, TaxonomyError};

#[derive(Debug, Error)]
pub enum LabelerError {
    #[error("the patch has no hunks")]
    EmptyBundle,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    /// Every request failed, so there is nothing to label with.
    #[error("{request}: {source}")]
    Backend {
        request: String,
        #[source]
        source: BackendError,
    },
}

/// A reply warning tagged with the request it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestWarning {
    pub request: String,
    #[serde(flatten)]
    pub warning: ReplyWarning,
}

/// A request whose hunks ended up unlabeled because it failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestFailure {
    pub request: String,
    pub hunks: Vec<u32>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerRun {
    pub mode: LabelerMode,
    /// `T(h)` for every hunk, including empty sets.
    pub labels: BTreeMap<u32, BTreeSet<LabelType>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reasoning: BTreeMap<u32, String>,
    pub warnings: Vec<RequestWarning>,
    pub failures: Vec<RequestFailure>,
    pub usage: Usage,
    pub requests: usize,
}

/// Token cost divided by the number of hunks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostPerHunk {
    pub input: f64,
    pub output: f64,
}

impl CostPerHunk {
    pub fn from_usage(usage: &Usage, hunk_count: usize) -> Option<Self> {
        if hunk_count == 0 {
            return None;
        }
        Some(CostPerHunk {
            input: usage.input_tokens as f64 / hunk_count as f64,
            output: usage.output_tokens as f64 / hunk_count as f64,
        })
    }
}

/// Labeler token cost per hunk; `None` for an empty patch.
pub fn cost_per_hunk(run: &LabelerRun, hunk_count: usize) -> Option<CostPerHunk> {
    CostPerHunk::from_usage(&run.usage, hunk_count)
}

enum Outcome {
    Parsed {
        usage: Usage,
        entries: Vec<(u32, BTreeSet<LabelType>, String)>,
        warnings: Vec<ReplyWarning>,
    },
    Failed {
        usage: Option<Usage>,
        error: String,
        backend: Option<BackendError>,
    },
}

fn run_request(client: &LlmClient, mode: LabelerMode, req: &PromptRequest) -> Outcome {
    let resp = match client.complete(req) {
        Ok(r) => r,
        Err(e) => {
            return Outcome::Failed {
                usage: None,
                error: e.to_string(),
                backend: Some(e),
            }
        }
    };
    match parse_labeler_reply(&resp.raw_text, mode, &req.covered_hunks) {
        Ok(reply) => Outcome::Parsed {
            usage: resp.usage,
            entries: reply
                .entries
                .into_iter()
                .map(|(h, e)| (h, e.labels, e.reasoning))
                .collect(),
            warnings: reply.warnings,
        },
        Err(e) => Outcome::Failed {
            usage: Some(resp.usage),
            error: e.to_string(),
            backend: None,
        },
    }
}

/// Label every hunk of `bundle`, fanning requests out over up to `workers`
/// threads. The result does not depend on the order replies arrive in.
///
/// A failed request leaves its hunks unlabeled and is recorded in the run;
/// only when every request fails at the backend is an error returned.
pub fn run_labeler(
    bundle: &PatchBundle,
    mode: LabelerMode,
    client: &LlmClient,
    templates: &PromptTemplates,
    workers: usize,
) -> Result<(LabelingSet, LabelerRun), LabelerError> {
    if bundle.hunk_count() == 0 {
        return Err(LabelerError::EmptyBundle);
    }
    let requests = labeler_requests(templates, mode, bundle)?;
    log::info!("labeler: {} {mode}-mode request(s) for {} hunks", requests.len(), bundle.hunk_count());
    let outcomes = map_ordered(&requests, workers, |req| run_request(client, mode, req));

    let mut run = LabelerRun {
        mode,
        labels: bundle.hunks().map(|h| (h.global_index, BTreeSet::new())).collect(),
        reasoning: BTreeMap::new(),
        warnings: Vec::new(),
        failures: Vec::new(),
        usage: Usage::default(),
        requests: requests.len(),
    };
    let mut first_backend_error = None;
    let mut backend_failures = 0;
    for (req, outcome) in requests.iter().zip(outcomes) {
        match outcome {
            Outcome::Parsed { usage, entries, warnings } => {
                run.usage += usage;
                for (hunk, labels, reasoning) in entries {
                    run.labels.insert(hunk, labels);
                    if !reasoning.is_empty() {
                        run.reasoning.insert(hunk, reasoning);
                    }
                }
                run.warnings.extend(warnings.into_iter().map(|warning| RequestWarning {
                    request: req.key.clone(),
                    warning,
                }));
            }
            Outcome::Failed { usage, error, backend } => {
                log::warn!("labeler request {} failed: {error}", req.key);
                if let Some(u) = usage {
                    run.usage += u;
                }
                if let Some(e) = backend {
                    backend_failures += 1;
                    first_backend_error.get_or_insert((req.key.clone(), e));
                }
                run.failures.push(RequestFailure {
                    request: req.key.clone(),
                    hunks: req.covered_hunks.clone(),
                    error,
                });
            }
        }
    }
    if backend_failures == requests.len() {
        if let Some((request, source)) = first_backend_error {
            return Err(LabelerError::Backend { request, source });
        }
    }

    let set = set_from_types(&run.labels, bundle.hunk_count())?;
    Ok((set, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::parse_patch;
    use crate::llm::{FailingBackend, Fault, RetryPolicy, ScriptedBackend, TokenUsage};
    use crate::taxonomy::{validate, LabelingInstance};
    use std::sync::Arc;

    const PATCH: &str = "\
--- a/a.py
+++ b/a.py
@@ -1,2 +1,2 @@
-# old
+# new
 x = 1
@@ -10,2 +10,2 @@ def f():
-    return 1
+    return 2
     pass
--- a/b.py
+++ b/b.py
@@ -3 +3 @@
-print(1)
+print(2)
";

    fn client<B: crate::llm::Backend + 'static>(b: B) -> LlmClient {
        LlmClient::new(Arc::new(b), RetryPolicy::no_delay(0))
    }

    #[test]
    fn documented_reply_gives_ids_1000_and_1001() {
        let bundle = parse_patch(PATCH, None).unwrap();
        let reply = r#"<json>{"reasoning": "r", "label_names": ["documentation", "internal_interface_change"]}</json>"#;
        let backend = ScriptedBackend::keyed([("labeler-hunk-1", reply)]).with_fallback(r#"{"label_names": []}"#);
        let (set, run) =
            run_labeler(&bundle, LabelerMode::Hunk, &client(backend), &PromptTemplates::builtin(), 2).unwrap();
        assert_eq!(
            set.instances,
            vec![
                LabelingInstance::new(1000, 1, LabelType::Documentation),
                LabelingInstance::new(1001, 1, LabelType::InternalInterfaceChange),
            ]
        );
        assert_eq!(run.requests, 3);
        assert!(run.labels[&3].is_empty());
        assert!(validate(&set).is_empty());
    }

    #[test]
    fn failed_hunk_request_leaves_hunk_unlabeled() {
        let bundle = parse_patch(PATCH, None).unwrap();
        let backend = FailingBackend::new(ScriptedBackend::fixed(r#"{"label_names": ["logic_change"]}"#), vec![])
            .with_key_fault("labeler-hunk-2", Fault::Status(500));
        let (set, run) =
            run_labeler(&bundle, LabelerMode::Hunk, &client(backend), &PromptTemplates::builtin(), 1).unwrap();
        assert_eq!(set.instances.len(), 2);
        assert!(set.on_hunk(2).next().is_none());
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].hunks, vec![2]);
    }

    #[test]
    fn schema_error_is_a_failure_not_an_abort() {
        let bundle = parse_patch(PATCH, None).unwrap();
        let (set, run) = run_labeler(
            &bundle,
            LabelerMode::Patch,
            &client(ScriptedBackend::fixed("I cannot help with that.")),
            &PromptTemplates::builtin(),
            1,
        )
        .unwrap();
        assert!(set.instances.is_empty());
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].hunks, vec![1, 2, 3]);
    }

    #[test]
    fn all_requests_failing_is_an_error() {
        let bundle = parse_patch(PATCH, None).unwrap();
        let backend = FailingBackend::new(ScriptedBackend::fixed("{}"), vec![Fault::Status(401)]);
        let err = run_labeler(&bundle, LabelerMode::Patch, &client(backend), &PromptTemplates::builtin(), 1)
            .unwrap_err();
        assert!(matches!(err, LabelerError::Backend { source: BackendError::Auth(_), .. }));
    }

    #[test]
    fn usage_totals_and_cost() {
        let bundle = parse_patch(PATCH, None).unwrap();
        let backend = ScriptedBackend::fixed(r#"{"response_dict": {}}"#).with_usage(TokenUsage::new(300, 60));
        let (_, run) =
            run_labeler(&bundle, LabelerMode::File, &client(backend), &PromptTemplates::builtin(), 4).unwrap();
        assert_eq!(run.requests, 2);
        assert_eq!((run.usage.input_tokens, run.usage.output_tokens), (600, 120));
        assert_eq!(run.warnings.len(), 3);
        let cost = cost_per_hunk(&run, 3).unwrap();
        assert_eq!((cost.input, cost.output), (200.0, 40.0));
        assert!(cost_per_hunk(&run, 0).is_none());
    }
}
