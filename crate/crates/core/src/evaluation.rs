//! Label-set overlap, per-type precision/recall, parent and attribute
//! scores, and per-hunk token cost.
//!
//! Metrics are accumulated as raw sums in [`EvalCounts`] so that several
//! patches can be pooled before dividing. A ratio with a zero denominator is
//! undefined and reported as `None`, never as 0 or 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeler::CostPerHunk;
use crate::llm::Usage;
use crate::taxonomy::{LabelType, LabelingInstance, LabelingSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("benchmark has no hunks")]
    EmptyBenchmark,
    #[error("prediction covers {predicted} hunks but ground truth covers {truth}")]
    DomainMismatch { predicted: usize, truth: usize },
}

type HunkSets = [BTreeSet<LabelType>];

fn check_domain(pred: &HunkSets, gt: &HunkSets) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::DomainMismatch {
            predicted: pred.len(),
            truth: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    Ok(())
}

/// `|T ∩ G| / |T|` for one hunk, with an empty set standing for the single
/// pseudo-label "no label" on either side.
fn overlap_over_first(first: &BTreeSet<LabelType>, second: &BTreeSet<LabelType>) -> f64 {
    match (first.is_empty(), second.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => first.intersection(second).count() as f64 / first.len() as f64,
    }
}

/// Mean over hunks of the fraction of predicted labels that are correct.
pub fn avg_iop(pred: &HunkSets, gt: &HunkSets) -> Result<f64, EvalError> {
    check_domain(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| overlap_over_first(p, g)).sum();
    Ok(sum / gt.len() as f64)
}

/// Mean over hunks of the fraction of ground-truth labels recovered.
pub fn avg_iogt(pred: &HunkSets, gt: &HunkSets) -> Result<f64, EvalError> {
    check_domain(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| overlap_over_first(g, p)).sum();
    Ok(sum / gt.len() as f64)
}

/// Hits over a total; undefined when the total is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: f64,
    pub total: f64,
}

impl Tally {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0.0).then(|| self.hits / self.total)
    }

    fn add(&mut self, other: Tally) {
        self.hits += other.hits;
        self.total += other.total;
    }
}

/// Raw hunk counts for one label type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    /// Hunks where the type is both predicted and true.
    pub correct: usize,
    pub predicted: usize,
    pub support: usize,
}

/// Hunk-level counts per type.
pub fn per_type_counts(pred: &HunkSets, gt: &HunkSets) -> BTreeMap<LabelType, TypeCounts> {
    let mut out: BTreeMap<LabelType, TypeCounts> = LabelType::ALL.iter().map(|t| (*t, TypeCounts::default())).collect();
    for (p, g) in pred.iter().zip(gt) {
        for t in LabelType::ALL {
            let c = out.get_mut(&t).unwrap();
            let (in_p, in_g) = (p.contains(&t), g.contains(&t));
            c.predicted += in_p as usize;
            c.support += in_g as usize;
            c.correct += (in_p && in_g) as usize;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: usize,
}

impl From<TypeCounts> for TypeScore {
    fn from(c: TypeCounts) -> Self {
        TypeScore {
            precision: (c.predicted > 0).then(|| c.correct as f64 / c.predicted as f64),
            recall: (c.support > 0).then(|| c.correct as f64 / c.support as f64),
            support: c.support,
        }
    }
}

/// Hunk-level precision and recall of every label type.
pub fn per_type_pr(pred: &HunkSets, gt: &HunkSets) -> BTreeMap<LabelType, TypeScore> {
    per_type_counts(pred, gt).into_iter().map(|(t, c)| (t, c.into())).collect()
}

/// Matched amount over predicted and over true instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: f64,
    pub predicted: usize,
    pub truth: usize,
}

impl MatchCounts {
    fn add(&mut self, o: MatchCounts) {
        self.matched += o.matched;
        self.predicted += o.predicted;
        self.truth += o.truth;
    }

    pub fn score(&self) -> PrScore {
        PrScore {
            precision: (self.predicted > 0).then(|| self.matched / self.predicted as f64),
            recall: (self.truth > 0).then(|| self.matched / self.truth as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn instances_by_hunk(set: &LabelingSet, t: LabelType) -> BTreeMap<u32, Vec<&LabelingInstance>> {
    let mut out: BTreeMap<u32, Vec<&LabelingInstance>> = BTreeMap::new();
    for inst in set.instances.iter().filter(|i| i.label_type == t) {
        out.entry(inst.hunk_index).or_default().push(inst);
    }
    out
}

/// Hunk of an instance's parent; 0 for roots and unresolvable parents.
fn parent_hunk(inst: &LabelingInstance, by_id: &HashMap<u32, &LabelingInstance>) -> u32 {
    if inst.parent_id == 0 {
        return 0;
    }
    by_id.get(&inst.parent_id).map(|p| p.hunk_index).unwrap_or(0)
}

pub fn parent_counts(pred: &LabelingSet, gt: &LabelingSet, t: LabelType) -> MatchCounts {
    let (pred_ids, gt_ids) = (pred.by_id(), gt.by_id());
    let (p_by_hunk, g_by_hunk) = (instances_by_hunk(pred, t), instances_by_hunk(gt, t));
    let mut counts = MatchCounts {
        matched: 0.0,
        predicted: p_by_hunk.values().map(Vec::len).sum(),
        truth: g_by_hunk.values().map(Vec::len).sum(),
    };
    for (hunk, p_insts) in &p_by_hunk {
        let Some(g_insts) = g_by_hunk.get(hunk) else { continue };
        // Equality matching on one key: the maximum one-to-one matching is
        // the per-value minimum of the two multiplicities.
        let mut g_hist: HashMap<u32, usize> = HashMap::new();
        for g in g_insts {
            *g_hist.entry(parent_hunk(g, &gt_ids)).or_default() += 1;
        }
        for p in p_insts {
            if let Some(n) = g_hist.get_mut(&parent_hunk(p, &pred_ids)) {
                if *n > 0 {
                    *n -= 1;
                    counts.matched += 1.0;
                }
            }
        }
    }
    counts
}

/// Parent-match precision/recall for RENAME and CODE_MOVE.
pub fn parent_scores(pred: &LabelingSet, gt: &LabelingSet) -> BTreeMap<LabelType, PrScore> {
    [LabelType::Rename, LabelType::CodeMove]
        .into_iter()
        .map(|t| (t, parent_counts(pred, gt, t).score()))
        .collect()
}

fn field(attrs: &[String], i: usize) -> &str {
    attrs.get(i).map(|s| s.trim()).unwrap_or("")
}

/// Matching fields (position-wise, trimmed, exact) divided by 3.
pub fn attribute_similarity(a: &[String], b: &[String]) -> f64 {
    (0..3).filter(|&i| field(a, i) == field(b, i)).count() as f64 / 3.0
}

/// Largest instance count for which pairing is solved exhaustively.
const EXHAUSTIVE_LIMIT: usize = 7;

/// Maximum total weight of a one-to-one pairing between rows and columns.
fn best_assignment(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows.max(cols) <= EXHAUSTIVE_LIMIT {
        fn go(r: usize, used: &mut Vec<bool>, w: &[Vec<f64>]) -> f64 {
            if r == w.len() {
                return 0.0;
            }
            let mut best = go(r + 1, used, w);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[r][c] + go(r + 1, used, w));
                    used[c] = false;
                }
            }
            best
        }
        return go(0, &mut vec![false; cols], weights);
    }
    // Greedy: repeatedly take the heaviest remaining pair.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * cols);
    for (r, row) in weights.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            pairs.push((*w, r, c));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut row_used, mut col_used) = (vec![false; rows], vec![false; cols]);
    let mut total = 0.0;
    for (w, r, c) in pairs {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            total += w;
        }
    }
    total
}

pub fn attribute_counts(pred: &LabelingSet, gt: &LabelingSet, t: LabelType) -> MatchCounts {
    let (p_by_hunk, g_by_hunk) = (instances_by_hunk(pred, t), instances_by_hunk(gt, t));
    let mut counts = MatchCounts {
        matched: 0.0,
        predicted: p_by_hunk.values().map(Vec::len).sum(),
        truth: g_by_hunk.values().map(Vec::len).sum(),
    };
    for (hunk, p_insts) in &p_by_hunk {
        let Some(g_insts) = g_by_hunk.get(hunk) else { continue };
        let weights: Vec<Vec<f64>> = p_insts
            .iter()
            .map(|p| g_insts.iter().map(|g| attribute_similarity(&p.attributes, &g.attributes)).collect())
            .collect();
        counts.matched += best_assignment(&weights);
    }
    counts
}

/// Attribute precision/recall for RENAME and RETYPE.
pub fn attribute_scores(pred: &LabelingSet, gt: &LabelingSet) -> BTreeMap<LabelType, PrScore> {
    [LabelType::Rename, LabelType::Retype]
        .into_iter()
        .map(|t| (t, attribute_counts(pred, gt, t).score()))
        .collect()
}

/// Optional extras for [`evaluate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunInfo<'a> {
    /// Labeler output before refinement, scored separately if given.
    pub labeler_set: Option<&'a LabelingSet>,
    pub labeler_usage: Option<Usage>,
    pub refiner_usage: Option<Usage>,
}

/// Un-normalized sums behind an [`EvaluationReport`]; poolable across patches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub patches: usize,
    pub hunks: usize,
    pub iop: Tally,
    pub iogt: Tally,
    pub labeler_iop: Option<Tally>,
    pub labeler_iogt: Option<Tally>,
    pub per_type: BTreeMap<LabelType, TypeCounts>,
    pub parent: BTreeMap<LabelType, MatchCounts>,
    pub attribute: BTreeMap<LabelType, MatchCounts>,
    pub labeler_usage: Option<Usage>,
    pub refiner_usage: Option<Usage>,
}

fn add_opt<T: Copy>(acc: &mut Option<T>, x: Option<T>, add: impl Fn(&mut T, T)) {
    match (acc.as_mut(), x) {
        (Some(a), Some(x)) => add(a, x),
        (None, Some(x)) => *acc = Some(x),
        _ => {}
    }
}

impl EvalCounts {
    pub fn collect(pred: &LabelingSet, gt: &LabelingSet, info: RunInfo<'_>) -> Result<Self, EvalError> {
        if pred.hunk_count != gt.hunk_count {
            return Err(EvalError::DomainMismatch {
                predicted: pred.hunk_count,
                truth: gt.hunk_count,
            });
        }
        let (p, g) = (pred.per_hunk_types(), gt.per_hunk_types());
        let n = g.len() as f64;
        let iop = avg_iop(&p, &g)?;
        let iogt = avg_iogt(&p, &g)?;
        let (labeler_iop, labeler_iogt) = match info.labeler_set {
            Some(l) => {
                if l.hunk_count != gt.hunk_count {
                    return Err(EvalError::DomainMismatch {
                        predicted: l.hunk_count,
                        truth: gt.hunk_count,
                    });
                }
                let lp = l.per_hunk_types();
                (
                    Some(Tally { hits: avg_iop(&lp, &g)? * n, total: n }),
                    Some(Tally { hits: avg_iogt(&lp, &g)? * n, total: n }),
                )
            }
            None => (None, None),
        };
        Ok(EvalCounts {
            patches: 1,
            hunks: g.len(),
            iop: Tally { hits: iop * n, total: n },
            iogt: Tally { hits: iogt * n, total: n },
            labeler_iop,
            labeler_iogt,
            per_type: per_type_counts(&p, &g),
            parent: [LabelType::Rename, LabelType::CodeMove]
                .into_iter()
                .map(|t| (t, parent_counts(pred, gt, t)))
                .collect(),
            attribute: [LabelType::Rename, LabelType::Retype]
                .into_iter()
                .map(|t| (t, attribute_counts(pred, gt, t)))
                .collect(),
            labeler_usage: info.labeler_usage,
            refiner_usage: info.refiner_usage,
        })
    }

    pub fn merge(&mut self, other: &EvalCounts) {
        self.patches += other.patches;
        self.hunks += other.hunks;
        self.iop.add(other.iop);
        self.iogt.add(other.iogt);
        add_opt(&mut self.labeler_iop, other.labeler_iop, Tally::add);
        add_opt(&mut self.labeler_iogt, other.labeler_iogt, Tally::add);
        for (t, c) in &other.per_type {
            let e = self.per_type.entry(*t).or_default();
            e.correct += c.correct;
            e.predicted += c.predicted;
            e.support += c.support;
        }
        for (t, c) in &other.parent {
            self.parent.entry(*t).or_default().add(*c);
        }
        for (t, c) in &other.attribute {
            self.attribute.entry(*t).or_default().add(*c);
        }
        add_opt(&mut self.labeler_usage, other.labeler_usage, |a, b| *a += b);
        add_opt(&mut self.refiner_usage, other.refiner_usage, |a, b| *a += b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub avg_iop: f64,
    pub avg_iogt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub patches: usize,
    pub hunks: usize,
    pub avg_iop: f64,
    pub avg_iogt: f64,
    /// Scores of the labeler output before refinement, if it was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeler_stage: Option<StageScores>,
    pub per_type: BTreeMap<LabelType, TypeScore>,
    pub parent_scores: BTreeMap<LabelType, PrScore>,
    pub attribute_scores: BTreeMap<LabelType, PrScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostPerHunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refiner_cost: Option<CostPerHunk>,
}

impl EvaluationReport {
    pub fn from_counts(c: &EvalCounts) -> Result<Self, EvalError> {
        let avg_iop = c.iop.value().ok_or(EvalError::EmptyBenchmark)?;
        let avg_iogt = c.iogt.value().ok_or(EvalError::EmptyBenchmark)?;
        let labeler_stage = match (c.labeler_iop.and_then(|t| t.value()), c.labeler_iogt.and_then(|t| t.value())) {
            (Some(avg_iop), Some(avg_iogt)) => Some(StageScores { avg_iop, avg_iogt }),
            _ => None,
        };
        Ok(EvaluationReport {
            patches: c.patches,
            hunks: c.hunks,
            avg_iop,
            avg_iogt,
            labeler_stage,
            per_type: c.per_type.iter().map(|(t, k)| (*t, (*k).into())).collect(),
            parent_scores: c.parent.iter().map(|(t, k)| (*t, k.score())).collect(),
            attribute_scores: c.attribute.iter().map(|(t, k)| (*t, k.score())).collect(),
            cost: c.labeler_usage.and_then(|u| CostPerHunk::from_usage(&u, c.hunks)),
            refiner_cost: c.refiner_usage.and_then(|u| CostPerHunk::from_usage(&u, c.hunks)),
        })
    }

    /// Every defined fraction in the report, with a name for each.
    pub fn fractions(&self) -> Vec<(String, f64)> {
        let mut out = vec![("avg_iop".to_string(), self.avg_iop), ("avg_iogt".to_string(), self.avg_iogt)];
        if let Some(s) = &self.labeler_stage {
            out.push(("labeler.avg_iop".into(), s.avg_iop));
            out.push(("labeler.avg_iogt".into(), s.avg_iogt));
        }
        let mut push_pr = |prefix: &str, t: &LabelType, s: &PrScore| {
            if let Some(p) = s.precision {
                out.push((format!("{prefix}.{t}.precision"), p));
            }
            if let Some(r) = s.recall {
                out.push((format!("{prefix}.{t}.recall"), r));
            }
        };
        for (t, s) in &self.per_type {
            push_pr("type", t, &PrScore { precision: s.precision, recall: s.recall });
        }
        for (t, s) in &self.parent_scores {
            push_pr("parent", t, s);
        }
        for (t, s) in &self.attribute_scores {
            push_pr("attribute", t, s);
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(s, "patches: {}  hunks: {}", self.patches, self.hunks);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:>8} {:>9} {:>14}", "stage", "Avg-IoP", "Avg-IoGT", "cost in/out");
        let cost = |c: &Option<CostPerHunk>| {
            c.map_or_else(|| "-".to_string(), |c| format!("{:.0}/{:.0}", c.input, c.output))
        };
        if let Some(l) = &self.labeler_stage {
            let _ = writeln!(s, "{:<10} {:>8.2} {:>9.2} {:>14}", "labeler", l.avg_iop, l.avg_iogt, cost(&self.cost));
            let _ = writeln!(
                s,
                "{:<10} {:>8.2} {:>9.2} {:>14}",
                "refined",
                self.avg_iop,
                self.avg_iogt,
                cost(&self.refiner_cost)
            );
        } else {
            let _ = writeln!(s, "{:<10} {:>8.2} {:>9.2} {:>14}", "final", self.avg_iop, self.avg_iogt, cost(&self.cost));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<26} {:>9} {:>7} {:>8}", "label type", "precision", "recall", "support");
        for (t, sc) in &self.per_type {
            let _ = writeln!(s, "{:<26} {:>9} {:>7} {:>8}", t.name(), f(sc.precision), f(sc.recall), sc.support);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<26} {:>9} {:>7}", "structure", "precision", "recall");
        for (t, sc) in &self.parent_scores {
            let _ = writeln!(s, "{:<26} {:>9} {:>7}", format!("{} parent", t.name()), f(sc.precision), f(sc.recall));
        }
        for (t, sc) in &self.attribute_scores {
            let _ = writeln!(
                s,
                "{:<26} {:>9} {:>7}",
                format!("{} attributes", t.name()),
                f(sc.precision),
                f(sc.recall)
            );
        }
        s
    }

    /// `label_type,precision,recall,support`, blank cells for undefined values.
    pub fn per_type_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let mut s = String::from("label_type,precision,recall,support\n");
        for (t, sc) in &self.per_type {
            let _ = writeln!(s, "{},{},{},{}", t.name(), f(sc.precision), f(sc.recall), sc.support);
        }
        s
    }
}

/// Score one prediction against its ground truth.
pub fn evaluate(pred: &LabelingSet, gt: &LabelingSet, info: RunInfo<'_>) -> Result<EvaluationReport, EvalError> {
    EvaluationReport::from_counts(&EvalCounts::collect(pred, gt, info)?)
}
