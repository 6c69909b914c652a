//! Scoring: MAC multi-label metrics, ASR accuracy, AOR similarity buckets and
//! ARR precision@k / hit@k, plus per-negative error tallies.
//!
//! Zero-division convention: precision, recall and F1 are 0 when their denominator is 0.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::backends::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::hardneg::ArrOptionSet;
use crate::statements::AsrOptionSet;
use crate::taxonomy::AtypicalityCategory;

pub const STRONG_ABOVE: f64 = 0.7;
pub const MODERATE_FROM: f64 = 0.5;
pub const ARR_K_MAX: usize = 3;

fn check_len(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left, right })
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Number of distinct relevant entries among the first `k` of `ranked`.
pub fn relevant_in_top_k(ranked: &[usize], positives: &HashSet<usize>, k: usize) -> usize {
    let mut seen = HashSet::new();
    ranked
        .iter()
        .take(k)
        .filter(|p| positives.contains(p) && seen.insert(**p))
        .count()
}

/// `min(k, relevant in top k) / k`; slots past the end of `ranked` count as misses.
pub fn precision_at_k(ranked: &[usize], positives: &HashSet<usize>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    relevant_in_top_k(ranked, positives, k).min(k) as f64 / k as f64
}

pub fn hit_at_k(ranked: &[usize], positives: &HashSet<usize>, k: usize) -> bool {
    relevant_in_top_k(ranked, positives, k) > 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: AtypicalityCategory,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// `None` when the label has no positive or no negative samples.
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

impl LabelScores {
    fn from_cells(label: AtypicalityCategory, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let n = tp + fp + fn_ + tn;
        let pos = tp + fn_;
        let neg = fp + tn;
        // binary membership as the score: a single operating point
        let auc_roc = (pos > 0 && neg > 0).then(|| (1.0 + ratio(tp, pos) - ratio(fp, neg)) / 2.0);
        let auc_pr = (pos > 0).then(|| recall * precision + (1.0 - recall) * ratio(pos, n));
        Self {
            label,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, n),
            auc_roc,
            auc_pr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacScores {
    pub n: usize,
    pub per_label: Vec<LabelScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_precision_no_na: f64,
    pub macro_recall_no_na: f64,
    pub macro_f1_no_na: f64,
    pub subset_accuracy: f64,
    /// Mean over labels where the curve is defined.
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
}

impl MacScores {
    pub fn label(&self, label: AtypicalityCategory) -> &LabelScores {
        &self.per_label[label.index()]
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

pub fn mac_scores(
    predictions: &[BTreeSet<AtypicalityCategory>],
    gts: &[BTreeSet<AtypicalityCategory>],
) -> Result<MacScores> {
    check_len(predictions.len(), gts.len())?;
    let per_label: Vec<LabelScores> = AtypicalityCategory::ALL
        .iter()
        .map(|&label| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (p, g) in predictions.iter().zip(gts) {
                match (p.contains(&label), g.contains(&label)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            LabelScores::from_cells(label, tp, fp, fn_, tn)
        })
        .collect();
    let avg = |f: fn(&LabelScores) -> f64, with_na: bool| {
        let v: Vec<f64> = per_label
            .iter()
            .filter(|s| with_na || s.label.is_atypical())
            .map(f)
            .collect();
        mean(&v)
    };
    let exact = predictions.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(MacScores {
        n: gts.len(),
        macro_precision: avg(|s| s.precision, true),
        macro_recall: avg(|s| s.recall, true),
        macro_f1: avg(|s| s.f1, true),
        macro_precision_no_na: avg(|s| s.precision, false),
        macro_recall_no_na: avg(|s| s.recall, false),
        macro_f1_no_na: avg(|s| s.f1, false),
        subset_accuracy: ratio(exact, gts.len()),
        auc_roc: mean_defined(per_label.iter().map(|s| s.auc_roc)),
        auc_pr: mean_defined(per_label.iter().map(|s| s.auc_pr)),
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrScores {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub unparsed: usize,
    /// Wrong answers by the kind of negative that was chosen.
    pub errors_by_kind: BTreeMap<String, usize>,
}

/// `choices` are presented positions; `None` marks an unparseable answer (scored wrong).
pub fn asr_scores(option_sets: &[&AsrOptionSet], choices: &[Option<usize>]) -> Result<AsrScores> {
    check_len(choices.len(), option_sets.len())?;
    let mut correct = 0;
    let mut unparsed = 0;
    let mut errors_by_kind = BTreeMap::new();
    for (set, choice) in option_sets.iter().zip(choices) {
        match choice {
            None => unparsed += 1,
            Some(p) if *p == set.answer_index => correct += 1,
            Some(p) => {
                let kind = set.kind_at(*p).map_or("out_of_range", |k| k.name());
                *errors_by_kind.entry(kind.to_string()).or_insert(0) += 1;
            }
        }
    }
    Ok(AsrScores {
        n: choices.len(),
        correct,
        accuracy: ratio(correct, choices.len()),
        unparsed,
        errors_by_kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityBucket {
    Strong,
    Moderate,
    Low,
}

impl SimilarityBucket {
    /// Strong above 0.7; moderate on the closed interval [0.5, 0.7]; low below 0.5.
    pub fn of(similarity: f64) -> Self {
        if similarity > STRONG_ABOVE {
            SimilarityBucket::Strong
        } else if similarity >= MODERATE_FROM {
            SimilarityBucket::Moderate
        } else {
            SimilarityBucket::Low
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimilarityBucket::Strong => "strong",
            SimilarityBucket::Moderate => "moderate",
            SimilarityBucket::Low => "low",
        }
    }
}

pub fn is_boundary(similarity: f64) -> bool {
    const EPS: f64 = 1e-9;
    (similarity - STRONG_ABOVE).abs() < EPS || (similarity - MODERATE_FROM).abs() < EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AorScores {
    pub n: usize,
    pub mean_similarity: f64,
    pub strong: f64,
    pub moderate: f64,
    pub low: f64,
    /// Similarities within 1e-9 of a bucket edge.
    pub boundary_values: usize,
}

pub fn bucket_scores(similarities: &[f64]) -> AorScores {
    let n = similarities.len();
    let count = |b| similarities.iter().filter(|&&s| SimilarityBucket::of(s) == b).count();
    AorScores {
        n,
        mean_similarity: mean(similarities),
        strong: ratio(count(SimilarityBucket::Strong), n),
        moderate: ratio(count(SimilarityBucket::Moderate), n),
        low: ratio(count(SimilarityBucket::Low), n),
        boundary_values: similarities.iter().filter(|&&s| is_boundary(s)).count(),
    }
}

/// Cosine similarity of each (generated, reference) pair under `embedder`.
pub fn pair_similarities(pairs: &[(String, String)], embedder: &dyn Embedder) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(vec![]);
    }
    let texts: Vec<String> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let vectors = embedder.embed(&texts)?;
    check_len(vectors.len(), texts.len())?;
    Ok(vectors.chunks(2).map(|c| cosine_similarity(&c[0], &c[1])).collect())
}

pub fn similarity_buckets(pairs: &[(String, String)], embedder: &dyn Embedder) -> Result<AorScores> {
    Ok(bucket_scores(&pair_similarities(pairs, embedder)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrScores {
    pub n: usize,
    /// precision@1..=3.
    pub precision_at: Vec<f64>,
    /// Fraction of instances with any positive in the top k, k = 1..=3.
    pub hit_at: Vec<f64>,
    pub avg_precision: f64,
    /// Equals precision@1; reported as the single-choice accuracy.
    pub accuracy: f64,
    pub hit1_equals_precision1: bool,
    pub unparsed: usize,
    /// Selected negatives by the strategy that produced them.
    pub errors_by_strategy: BTreeMap<String, usize>,
}

/// `predictions` hold presented positions, best first. An empty list scores 0 everywhere.
pub fn arr_scores(predictions: &[Vec<usize>], option_sets: &[&ArrOptionSet]) -> Result<ArrScores> {
    arr_scores_with_unparsed(predictions, option_sets, 0)
}

pub(crate) fn arr_scores_with_unparsed(
    predictions: &[Vec<usize>],
    option_sets: &[&ArrOptionSet],
    unparsed: usize,
) -> Result<ArrScores> {
    check_len(predictions.len(), option_sets.len())?;
    let n = predictions.len();
    let mut precision_sum = [0.0; ARR_K_MAX];
    let mut hits = [0usize; ARR_K_MAX];
    let mut errors_by_strategy = BTreeMap::new();
    for (ranked, set) in predictions.iter().zip(option_sets) {
        let positives: HashSet<usize> = set.answer_indices.iter().copied().collect();
        for k in 1..=ARR_K_MAX {
            precision_sum[k - 1] += precision_at_k(ranked, &positives, k);
            hits[k - 1] += usize::from(hit_at_k(ranked, &positives, k));
        }
        for &p in ranked {
            if let Some(s) = set.strategy_at(p) {
                *errors_by_strategy.entry(s.name().to_string()).or_insert(0) += 1;
            }
        }
    }
    let precision_at: Vec<f64> = precision_sum
        .iter()
        .map(|s| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let hit_at: Vec<f64> = hits.iter().map(|&h| ratio(h, n)).collect();
    Ok(ArrScores {
        n,
        avg_precision: mean(&precision_at),
        accuracy: precision_at[0],
        hit1_equals_precision1: (hit_at[0] - precision_at[0]).abs() < 1e-12,
        precision_at,
        hit_at,
        unparsed,
        errors_by_strategy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskScores {
    Mac(MacScores),
    Asr(AsrScores),
    Aor(AorScores),
    Arr(ArrScores),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub task: String,
    pub input_variant: String,
    pub backend_id: String,
    pub unparsed: usize,
    pub scores: TaskScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub seed: u64,
    pub config_digest: String,
    pub catalog_digest: String,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub sections: Vec<ReportSection>,
}

pub const REPORT_NOTES: [&str; 3] = [
    "zero-division: precision, recall and F1 are 0 when the denominator is 0",
    "auc: binary-score caveat; label membership is the score, so each curve has a single operating point",
    "aor buckets: strong > 0.7, moderate in [0.5, 0.7], low < 0.5",
];

impl ScoreReport {
    pub fn new(seed: u64, config_digest: impl Into<String>, catalog_digest: impl Into<String>) -> Self {
        Self {
            seed,
            config_digest: config_digest.into(),
            catalog_digest: catalog_digest.into(),
            notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
            warnings: vec![],
            sections: vec![],
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn section(&self, task: &str, input_variant: &str) -> Option<&ReportSection> {
        self.sections
            .iter()
            .find(|s| s.task == task && s.input_variant == input_variant)
    }

    /// Long-format table: one metric per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,input_variant,backend_id,metric,value\n");
        let fmt = |v: f64| format!("{v:.6}");
        for s in &self.sections {
            let mut rows: Vec<(String, String)> = vec![("unparsed".into(), s.unparsed.to_string())];
            match &s.scores {
                TaskScores::Mac(m) => {
                    for l in &m.per_label {
                        rows.push((format!("{}.precision", l.label), fmt(l.precision)));
                        rows.push((format!("{}.recall", l.label), fmt(l.recall)));
                        rows.push((format!("{}.f1", l.label), fmt(l.f1)));
                    }
                    rows.push(("macro_f1".into(), fmt(m.macro_f1)));
                    rows.push(("macro_f1_no_na".into(), fmt(m.macro_f1_no_na)));
                    rows.push(("subset_accuracy".into(), fmt(m.subset_accuracy)));
                    rows.push(("auc_roc".into(), m.auc_roc.map_or(String::new(), fmt)));
                    rows.push(("auc_pr".into(), m.auc_pr.map_or(String::new(), fmt)));
                }
                TaskScores::Asr(a) => {
                    rows.push(("accuracy".into(), fmt(a.accuracy)));
                    for (k, v) in &a.errors_by_kind {
                        rows.push((format!("errors.{k}"), v.to_string()));
                    }
                }
                TaskScores::Aor(a) => {
                    rows.push(("mean_similarity".into(), fmt(a.mean_similarity)));
                    rows.push(("strong".into(), fmt(a.strong)));
                    rows.push(("moderate".into(), fmt(a.moderate)));
                    rows.push(("low".into(), fmt(a.low)));
                }
                TaskScores::Arr(a) => {
                    for (i, p) in a.precision_at.iter().enumerate() {
                        rows.push((format!("precision@{}", i + 1), fmt(*p)));
                    }
                    for (i, h) in a.hit_at.iter().enumerate() {
                        rows.push((format!("hit@{}", i + 1), fmt(*h)));
                    }
                    rows.push(("avg_precision".into(), fmt(a.avg_precision)));
                    for (k, v) in &a.errors_by_strategy {
                        rows.push((format!("errors.{k}"), v.to_string()));
                    }
                }
            }
            for (metric, value) in rows {
                out.push_str(&format!(
                    "{},{},{},{metric},{value}\n",
                    s.task, s.input_variant, s.backend_id
                ));
            }
        }
        out
    }
}
