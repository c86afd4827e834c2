//! Stage two: one model call per patch to correct context-starved types and
//! fill in parents and attributes, then a pure pass that applies the reply.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::PatchBundle;
use crate::llm::{parse_refiner_reply, BackendError, LlmClient, RefinerEntry, RefinerReply, Usage};
use crate::prompting::{render_refiner_prompt, CoveredLabel, PromptError, PromptTemplates, RefinerHunk, NONE_TYPE};
use crate::taxonomy::{
    instance_id_for, validate, LabelType, LabelingInstance, LabelingSet, RenameKind, MAX_LABELS_PER_HUNK,
};

#[derive(Debug, Error)]
pub enum RefinerError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("refiner request failed: {0}")]
    Backend(#[from] BackendError),
}

/// The hunks sent to the refiner and the labels it is asked about.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerPlan {
    pub hunks: Vec<RefinerHunk>,
    pub scopes: BTreeMap<u32, String>,
}

impl RefinerPlan {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    pub fn labels(&self) -> Vec<CoveredLabel> {
        self.hunks.iter().flat_map(|h| h.labels.iter().copied()).collect()
    }
}

/// Select hunks that carry a refiner-eligible label or no label at all.
/// Unlabeled hunks get a `NONE` pseudo-label on their next free id.
pub fn plan_refinement(bundle: &PatchBundle, set: &LabelingSet) -> RefinerPlan {
    let mut plan = RefinerPlan::default();
    for hunk in bundle.hunks() {
        let h = hunk.global_index;
        let mut on_hunk: Vec<&LabelingInstance> = set.on_hunk(h).collect();
        on_hunk.sort_by_key(|i| i.id);
        let labels: Vec<CoveredLabel> = if on_hunk.is_empty() {
            match instance_id_for(h, set.next_ordinal(h)) {
                Ok(id) => vec![CoveredLabel { id, hunk_index: h, label: None }],
                Err(e) => {
                    log::warn!("hunk {h}: no id left for a pseudo-label ({e})");
                    continue;
                }
            }
        } else {
            on_hunk
                .iter()
                .filter(|i| i.label_type.refiner_eligible())
                .map(|i| CoveredLabel { id: i.id, hunk_index: h, label: Some(i.label_type) })
                .collect()
        };
        if !labels.is_empty() {
            plan.scopes.insert(h, hunk.header.scope.clone());
            plan.hunks.push(RefinerHunk { hunk_index: h, labels });
        }
    }
    plan
}

fn type_label(t: Option<LabelType>) -> String {
    t.map(|t| t.name().to_string()).unwrap_or_else(|| NONE_TYPE.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeChange {
    pub id: u32,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub id: u32,
    pub new_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentRepair {
    pub id: u32,
    pub parent_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    /// True when there was nothing to refine or the reply was unusable.
    pub skipped: bool,
    pub type_changes: Vec<TypeChange>,
    pub ignored_updates: Vec<TypeChange>,
    /// Pseudo-labels that became real instances.
    pub materialized: Vec<u32>,
    pub splits: Vec<Split>,
    pub repaired_parents: Vec<ParentRepair>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

/// Whether the refiner may turn a label of type `from` into `to`.
fn legal_update(from: Option<LabelType>, to: Option<LabelType>) -> bool {
    match (from, to) {
        (_, None) => false,
        (None, Some(_)) | (Some(LabelType::LogicChange), Some(_)) => true,
        (Some(f), Some(t)) => f.refiner_eligible() && t.refiner_eligible(),
    }
}

const KIND_SYNONYMS: &[(&str, &str)] = &[
    ("VARIABLE", "VAR"),
    ("LOCAL", "VAR"),
    ("FUNCTION", "METHOD"),
    ("FUNC", "METHOD"),
    ("FIELD", "ATTRIBUTE"),
    ("PROPERTY", "ATTRIBUTE"),
    ("PARAM", "PARAMETER"),
    ("ARGUMENT", "PARAMETER"),
    ("MODULE", "PACKAGE"),
];

/// Canonical spelling of a rename kind, if it can be recognized.
fn canonical_rename_kind(raw: &str) -> Option<String> {
    let upper = raw.trim().to_ascii_uppercase();
    let upper = KIND_SYNONYMS
        .iter()
        .find(|(alias, _)| *alias == upper)
        .map(|(_, k)| k.to_string())
        .unwrap_or(upper);
    upper.parse::<RenameKind>().ok().map(|_| upper)
}

struct Pending {
    inst: LabelingInstance,
    wanted_parent: u32,
}

/// Apply a parsed refiner reply to `set`. Total: every problem in the reply
/// is repaired or ignored and reported, and the result always validates.
pub fn apply_refinement(
    set: &LabelingSet,
    plan: &RefinerPlan,
    reply: &RefinerReply,
) -> (LabelingSet, RefinementReport) {
    let mut report = RefinementReport {
        warnings: reply.warnings.iter().map(|w| w.to_string()).collect(),
        ..Default::default()
    };
    let covered: HashMap<u32, CoveredLabel> = plan.labels().into_iter().map(|l| (l.id, l)).collect();

    // Next free ordinal per hunk, past both existing ids and pseudo-label ids.
    let mut next_ordinal: HashMap<u32, u32> = HashMap::new();
    for inst in &set.instances {
        let e = next_ordinal.entry(inst.hunk_index).or_default();
        *e = (*e).max(set.next_ordinal(inst.hunk_index));
    }
    for label in covered.values() {
        let e = next_ordinal.entry(label.hunk_index).or_default();
        *e = (*e).max(label.id % MAX_LABELS_PER_HUNK + 1);
    }

    let mut untouched: Vec<LabelingInstance> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    for inst in &set.instances {
        if !covered.contains_key(&inst.id) {
            untouched.push(inst.clone());
        }
    }

    for hunk in &plan.hunks {
        for label in &hunk.labels {
            let keep;
            let entry: &RefinerEntry = match reply.entries.get(&label.id) {
                Some(e) => e,
                None => {
                    keep = RefinerEntry {
                        reasoning: String::new(),
                        updated_type: label.label,
                        attributes: Vec::new(),
                        parent_id: 0,
                    };
                    &keep
                }
            };

            let final_type = if entry.updated_type == label.label {
                label.label
            } else if legal_update(label.label, entry.updated_type) {
                report.type_changes.push(TypeChange {
                    id: label.id,
                    from: type_label(label.label),
                    to: type_label(entry.updated_type),
                });
                entry.updated_type
            } else {
                let change = TypeChange {
                    id: label.id,
                    from: type_label(label.label),
                    to: type_label(entry.updated_type),
                };
                report
                    .warnings
                    .push(format!("label {}: ignored update from {} to {}", label.id, change.from, change.to));
                report.ignored_updates.push(change);
                label.label
            };
            let Some(t) = final_type else {
                continue; // NONE kept: the hunk stays unlabeled.
            };
            if label.label.is_none() {
                report.materialized.push(label.id);
            }

            let mut attributes = entry.attributes.clone();
            if !t.needs_attributes() && !attributes.is_empty() {
                report
                    .warnings
                    .push(format!("label {}: dropped attributes on a {t} label", label.id));
                attributes.clear();
            }
            if !attributes.len().is_multiple_of(3) {
                let to = attributes.len() / 3 * 3;
                report
                    .warnings
                    .push(format!("label {}: truncated {} attributes to {to}", label.id, attributes.len()));
                attributes.truncate(to);
            }
            let wanted_parent = if t.needs_parent() {
                entry.parent_id
            } else {
                if entry.parent_id != 0 {
                    report
                        .warnings
                        .push(format!("label {}: dropped parent {} on a {t} label", label.id, entry.parent_id));
                }
                0
            };

            let mut triples: Vec<Vec<String>> = attributes.chunks(3).map(|c| c.to_vec()).collect();
            for triple in &mut triples {
                if t != LabelType::Rename {
                    continue;
                }
                match canonical_rename_kind(&triple[0]) {
                    Some(kind) => triple[0] = kind,
                    None => {
                        report.warnings.push(format!(
                            "label {}: dropped rename triple with unknown kind {:?}",
                            label.id, triple[0]
                        ));
                        triple.clear();
                    }
                }
            }
            triples.retain(|tr| !tr.is_empty());

            let first = LabelingInstance {
                id: label.id,
                hunk_index: label.hunk_index,
                label_type: t,
                parent_id: 0,
                attributes: triples.first().cloned().unwrap_or_default(),
            };
            pending.push(Pending { inst: first, wanted_parent });

            let mut new_ids = Vec::new();
            for triple in triples.into_iter().skip(1) {
                let ordinal = next_ordinal.entry(label.hunk_index).or_default();
                let id = match instance_id_for(label.hunk_index, *ordinal) {
                    Ok(id) => id,
                    Err(e) => {
                        report.warnings.push(format!("label {}: cannot split further ({e})", label.id));
                        break;
                    }
                };
                *ordinal += 1;
                new_ids.push(id);
                pending.push(Pending {
                    inst: LabelingInstance {
                        id,
                        hunk_index: label.hunk_index,
                        label_type: t,
                        parent_id: 0,
                        attributes: triple,
                    },
                    wanted_parent,
                });
            }
            if !new_ids.is_empty() {
                report.splits.push(Split { id: label.id, new_ids });
            }
        }
    }

    // Parents are resolved only now, against the final types.
    let final_types: HashMap<u32, LabelType> = untouched
        .iter()
        .map(|i| (i.id, i.label_type))
        .chain(pending.iter().map(|p| (p.inst.id, p.inst.label_type)))
        .collect();
    let mut instances = untouched;
    for Pending { mut inst, wanted_parent } in pending {
        if wanted_parent != 0 {
            let problem = if wanted_parent == inst.id {
                Some("points to itself".to_string())
            } else {
                match final_types.get(&wanted_parent) {
                    None => Some("does not exist".to_string()),
                    Some(pt) if *pt != inst.label_type => Some(format!("has type {pt}, not {}", inst.label_type)),
                    Some(_) => None,
                }
            };
            match problem {
                None => inst.parent_id = wanted_parent,
                Some(reason) => {
                    report.warnings.push(format!(
                        "label {}: parent {wanted_parent} {reason}; set to 0",
                        inst.id
                    ));
                    report.repaired_parents.push(ParentRepair {
                        id: inst.id,
                        parent_id: wanted_parent,
                        reason,
                    });
                }
            }
        }
        instances.push(inst);
    }

    let out = LabelingSet::from_instances(set.hunk_count, instances);
    let violations = validate(&out);
    if !violations.is_empty() {
        // Only reachable if the input set was already invalid.
        for v in &violations {
            report.warnings.push(format!("output still invalid: {v}"));
        }
    }
    (out, report)
}

/// Plan, query and apply. An empty plan skips the call; an unusable reply
/// leaves the set unchanged with a warning.
pub fn run_refiner(
    bundle: &PatchBundle,
    set: &LabelingSet,
    client: &LlmClient,
    templates: &PromptTemplates,
) -> Result<(LabelingSet, RefinementReport), RefinerError> {
    let plan = plan_refinement(bundle, set);
    if plan.is_empty() {
        log::info!("refiner: nothing to refine");
        return Ok((
            set.clone(),
            RefinementReport {
                skipped: true,
                warnings: vec!["no hunk needs refinement; labels unchanged".into()],
                ..Default::default()
            },
        ));
    }
    let request = render_refiner_prompt(templates, bundle, &plan.hunks)?;
    log::info!("refiner: {} label(s) on {} hunk(s)", request.covered_labels.len(), plan.hunks.len());
    let resp = client.complete(&request)?;
    match parse_refiner_reply(&resp.raw_text, &request.covered_labels) {
        Ok(reply) => {
            let (out, mut report) = apply_refinement(set, &plan, &reply);
            report.usage = Some(resp.usage);
            Ok((out, report))
        }
        Err(e) => {
            log::warn!("refiner reply unusable: {e}");
            Ok((
                set.clone(),
                RefinementReport {
                    skipped: true,
                    warnings: vec![format!("refiner reply unusable ({e}); labels unchanged")],
                    usage: Some(resp.usage),
                    ..Default::default()
                },
            ))
        }
    }
}

/// Prepare request for a dry run without calling a backend.
pub fn refiner_request(
    bundle: &PatchBundle,
    set: &LabelingSet,
    templates: &PromptTemplates,
) -> Result<Option<crate::prompting::PromptRequest>, PromptError> {
    let plan = plan_refinement(bundle, set);
    if plan.is_empty() {
        return Ok(None);
    }
    render_refiner_prompt(templates, bundle, &plan.hunks).map(Some)
}
