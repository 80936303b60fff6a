//! Decision and ranking metrics, plus the Mann-Whitney U group test.
//!
//! Spearman uses average ranks for ties. Kendall is the tau-b variant where
//! the tie terms count pairs tied in exactly one of the two rankings. NDCG
//! uses graded relevance `2^y - 1` with scores clipped to [0, 10].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),
    #[error("SizeMismatch: {left} vs {right} ({context})")]
    SizeMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },
    #[error("DegenerateLabels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("DegenerateInput: {0}")]
    DegenerateInput(&'static str),
    #[error("UnknownMetric: {0:?}")]
    UnknownMetric(String),
}

/// Named metric, parseable from its CLI spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricName {
    Accuracy,
    MacroF1,
    Auc,
    Spearman,
    KendallTauB,
    NdcgAt10,
    /// Mean of the six metrics above.
    Average,
}

impl FromStr for MetricName {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" => Ok(Self::Accuracy),
            "macro_f1" | "macro-f1" | "f1" => Ok(Self::MacroF1),
            "auc" => Ok(Self::Auc),
            "spearman" => Ok(Self::Spearman),
            "kendall" | "kendall_tau_b" | "tau_b" => Ok(Self::KendallTauB),
            "ndcg@10" | "ndcg10" | "ndcg" => Ok(Self::NdcgAt10),
            "average" | "avg" => Ok(Self::Average),
            other => Err(MetricsError::UnknownMetric(other.to_string())),
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Accuracy => "accuracy",
            Self::MacroF1 => "macro_f1",
            Self::Auc => "auc",
            Self::Spearman => "spearman",
            Self::KendallTauB => "kendall_tau_b",
            Self::NdcgAt10 => "ndcg@10",
            Self::Average => "average",
        };
        f.write_str(s)
    }
}

/// Aligned predictions and ground truth for one evaluation run.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub ids: Vec<String>,
    pub pred_scores: Vec<f64>,
    pub pred_decisions: Vec<bool>,
    pub true_scores: Vec<f64>,
    pub true_decisions: Vec<bool>,
}

impl EvalInput {
    pub fn new(
        ids: Vec<String>,
        pred_scores: Vec<f64>,
        pred_decisions: Vec<bool>,
        true_scores: Vec<f64>,
        true_decisions: Vec<bool>,
    ) -> Result<Self, MetricsError> {
        let n = ids.len();
        if n == 0 {
            return Err(MetricsError::EmptyInput("EvalInput"));
        }
        for (len, context) in [
            (pred_scores.len(), "pred_scores"),
            (pred_decisions.len(), "pred_decisions"),
            (true_scores.len(), "true_scores"),
            (true_decisions.len(), "true_decisions"),
        ] {
            if len != n {
                return Err(MetricsError::SizeMismatch {
                    left: n,
                    right: len,
                    context,
                });
            }
        }
        Ok(Self {
            ids,
            pred_scores,
            pred_decisions,
            true_scores,
            true_decisions,
        })
    }
}

/// The six headline metrics plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub spearman: f64,
    pub kendall_tau_b: f64,
    pub ndcg_at_10: f64,
    pub average: f64,
}

impl MetricReport {
    pub fn compute(input: &EvalInput) -> Result<Self, MetricsError> {
        let accuracy = accuracy(&input.pred_decisions, &input.true_decisions)?;
        let macro_f1 = macro_f1(&input.pred_decisions, &input.true_decisions)?;
        let auc = auc(&input.pred_scores, &input.true_decisions)?;
        let spearman = spearman(&input.pred_scores, &input.true_scores)?;
        let kendall_tau_b = kendall_tau_b(&input.pred_scores, &input.true_scores)?;
        let order = order_by_score_desc(&input.ids, &input.pred_scores);
        let rels: Vec<f64> = order.iter().map(|&i| input.true_scores[i]).collect();
        let ndcg_at_10 = ndcg_at_k(&rels, 10)?;
        let average = (accuracy + macro_f1 + auc + spearman + kendall_tau_b + ndcg_at_10) / 6.0;
        Ok(Self {
            accuracy,
            macro_f1,
            auc,
            spearman,
            kendall_tau_b,
            ndcg_at_10,
            average,
        })
    }

    pub fn value(&self, name: MetricName) -> f64 {
        match name {
            MetricName::Accuracy => self.accuracy,
            MetricName::MacroF1 => self.macro_f1,
            MetricName::Auc => self.auc,
            MetricName::Spearman => self.spearman,
            MetricName::KendallTauB => self.kendall_tau_b,
            MetricName::NdcgAt10 => self.ndcg_at_10,
            MetricName::Average => self.average,
        }
    }

    /// Flat `key: value` lines, one per metric.
    pub fn to_kv_lines(&self) -> String {
        format!(
            "accuracy: {:.6}\nmacro_f1: {:.6}\nauc: {:.6}\nspearman: {:.6}\nkendall_tau_b: {:.6}\nndcg@10: {:.6}\naverage: {:.6}\n",
            self.accuracy,
            self.macro_f1,
            self.auc,
            self.spearman,
            self.kendall_tau_b,
            self.ndcg_at_10,
            self.average
        )
    }
}

/// Fraction of matching binary decisions.
pub fn accuracy(pred: &[bool], truth: &[bool]) -> Result<f64, MetricsError> {
    check_pair(pred.len(), truth.len(), "accuracy")?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Macro-averaged F1 over the two decision classes. A class with zero
/// precision and recall contributes F1 = 0.
pub fn macro_f1(pred: &[bool], truth: &[bool]) -> Result<f64, MetricsError> {
    check_pair(pred.len(), truth.len(), "macro_f1")?;
    let f1_for = |class: bool| {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == class && **t == class)
            .count() as f64;
        let pred_pos = pred.iter().filter(|p| **p == class).count() as f64;
        let true_pos = truth.iter().filter(|t| **t == class).count() as f64;
        if pred_pos == 0.0 && true_pos == 0.0 {
            return 0.0;
        }
        let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
        let recall = if true_pos > 0.0 { tp / true_pos } else { 0.0 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    Ok((f1_for(true) + f1_for(false)) / 2.0)
}

/// Probability that a random positive outscores a random negative, ties
/// counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_pair(scores.len(), labels.len(), "auc")?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| *s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (pos.len() as f64 * neg.len() as f64))
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j are tied; mean of 1-based ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Spearman correlation: rank-difference formula over average ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred.len(), truth.len(), "spearman")?;
    if pred.len() < 2 || is_constant(pred) || is_constant(truth) {
        return Err(MetricsError::DegenerateInput(
            "spearman needs two non-constant vectors of length >= 2",
        ));
    }
    let rp = average_ranks(pred);
    let rt = average_ranks(truth);
    let n = pred.len() as f64;
    let sum_sq: f64 = rp.iter().zip(&rt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * sum_sq / (n * (n * n - 1.0)))
}

/// Kendall tau-b where the tie corrections count pairs tied in exactly one
/// ranking. Concordant/discordant counts come from a merge-sort inversion
/// count rather than pair enumeration.
pub fn kendall_tau_b(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred.len(), truth.len(), "kendall_tau_b")?;
    let n = pred.len();
    if n < 2 || is_constant(pred) || is_constant(truth) {
        return Err(MetricsError::DegenerateInput(
            "kendall_tau_b needs two non-constant vectors of length >= 2",
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        pred[a]
            .partial_cmp(&pred[b])
            .unwrap()
            .then(truth[a].partial_cmp(&truth[b]).unwrap())
    });

    let tie_pairs = |counts: &mut Vec<usize>| -> f64 {
        counts.drain(..).map(|c| (c * (c - 1) / 2) as f64).sum()
    };

    // pairs tied in pred, and tied in both, from runs of the (pred, truth) sort
    let mut run_x = Vec::new();
    let mut run_xy = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pred[idx[j]] == pred[idx[i]] {
            j += 1;
        }
        run_x.push(j - i);
        let mut k = i;
        while k < j {
            let mut m = k + 1;
            while m < j && truth[idx[m]] == truth[idx[k]] {
                m += 1;
            }
            run_xy.push(m - k);
            k = m;
        }
        i = j;
    }
    let ties_pred = tie_pairs(&mut run_x);
    let ties_both = tie_pairs(&mut run_xy);

    // pairs tied in truth
    let mut truth_sorted: Vec<f64> = truth.to_vec();
    truth_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && truth_sorted[j] == truth_sorted[i] {
            j += 1;
        }
        runs.push(j - i);
        i = j;
    }
    let ties_truth = tie_pairs(&mut runs);

    let mut ys: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
    let n_d = merge_count_inversions(&mut ys);

    let n0 = (n * (n - 1) / 2) as f64;
    let n_c = n0 - ties_pred - ties_truth + ties_both - n_d;
    let nx_only = ties_pred - ties_both;
    let ny_only = ties_truth - ties_both;
    let denom = ((n0 - nx_only) * (n0 - ny_only)).sqrt();
    if denom == 0.0 {
        return Err(MetricsError::DegenerateInput(
            "kendall_tau_b denominator is zero",
        ));
    }
    Ok((n_c - n_d) / denom)
}

/// Count pairs i < j with v[i] > v[j] (strict), sorting v in the process.
fn merge_count_inversions(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut count = merge_count_inversions(left) + merge_count_inversions(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            // left[i..] are all strictly greater than right[j]
            count += (left.len() - i) as f64;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    v.copy_from_slice(&merged);
    count
}

/// NDCG over the top `min(k, n)` items. `rels_in_pred_order[i]` is the
/// ground-truth relevance of the item predicted at rank i+1. Relevance is
/// clipped to [0, 10] before exponentiation.
pub fn ndcg_at_k(rels_in_pred_order: &[f64], k: usize) -> Result<f64, MetricsError> {
    if rels_in_pred_order.is_empty() {
        return Err(MetricsError::EmptyInput("ndcg"));
    }
    let cutoff = k.min(rels_in_pred_order.len());
    let gain = |y: f64| 2f64.powf(y.clamp(0.0, 10.0)) - 1.0;
    let dcg: f64 = rels_in_pred_order[..cutoff]
        .iter()
        .enumerate()
        .map(|(i, &y)| gain(y) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal = rels_in_pred_order.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal[..cutoff]
        .iter()
        .enumerate()
        .map(|(i, &y)| gain(y) / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        // every item has zero gain; any ordering is ideal
        return Ok(1.0);
    }
    Ok(dcg / idcg)
}

/// NDCG@10 for a predicted id ordering against a relevance map.
pub fn ndcg_at_10(
    pred_order: &[String],
    true_scores: &HashMap<String, f64>,
) -> Result<f64, MetricsError> {
    let rels: Vec<f64> = pred_order
        .iter()
        .map(|id| true_scores.get(id).copied().unwrap_or(0.0))
        .collect();
    ndcg_at_k(&rels, 10)
}

/// Two-sided Mann-Whitney U test. Returns `(U, p)` where U counts wins of
/// `group_a` over `group_b` with half credit for ties. Small tie-free inputs
/// use the exact null distribution; otherwise the normal approximation with
/// tie correction applies.
pub fn mann_whitney_u(group_a: &[f64], group_b: &[f64]) -> Result<(f64, f64), MetricsError> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(MetricsError::EmptyInput("mann_whitney_u"));
    }
    let n1 = group_a.len();
    let n2 = group_b.len();
    let mut pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let ranks = average_ranks(&pooled);
    let r_a: f64 = ranks[..n1].iter().sum();
    let u_a = r_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let u_b = (n1 * n2) as f64 - u_a;

    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        tie_groups.push(j - i);
        i = j;
    }
    let has_ties = tie_groups.iter().any(|&g| g > 1);

    let p = if !has_ties && n1 < 20 && n2 < 20 {
        exact_two_sided_p(n1, n2, u_a.min(u_b))
    } else {
        let n = (n1 + n2) as f64;
        let tie_term: f64 = tie_groups
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum::<f64>()
            / (n * (n - 1.0));
        let sigma_sq = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
        if sigma_sq <= 0.0 {
            1.0
        } else {
            let mu = (n1 * n2) as f64 / 2.0;
            let diff = u_a - mu;
            let cc = 0.5 * diff.signum();
            let z = if diff == 0.0 {
                0.0
            } else {
                (diff - cc) / sigma_sq.sqrt()
            };
            (2.0 * normal_sf(z.abs())).min(1.0)
        }
    };
    Ok((u_a, p))
}

/// Exact two-sided p for tie-free samples: 2 * P(U <= u_min) under the null.
///
/// Counts arrangements with the recurrence f(a, b, u) = f(a-1, b, u-b) +
/// f(a, b-1, u), obtained by casing on whether the largest pooled value
/// belongs to group A (it then beats all b B-items) or to group B.
fn exact_two_sided_p(n1: usize, n2: usize, u_min: f64) -> f64 {
    let u_cap = n1 * n2;
    // prev holds f(a, b-1, u); with no B items, U must be 0
    let mut prev = vec![vec![0f64; u_cap + 1]; n1 + 1];
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for b in 1..=n2 {
        let mut cur = vec![vec![0f64; u_cap + 1]; n1 + 1];
        cur[0][0] = 1.0;
        for a in 1..=n1 {
            for u in 0..=u_cap {
                let largest_in_b = prev[a][u];
                let largest_in_a = if u >= b { cur[a - 1][u - b] } else { 0.0 };
                cur[a][u] = largest_in_b + largest_in_a;
            }
        }
        prev = cur;
    }
    let total: f64 = prev[n1].iter().sum();
    let tail: f64 = prev[n1][..=(u_min as usize).min(u_cap)].iter().sum();
    (2.0 * tail / total).min(1.0)
}

/// Standard normal survival function via the Abramowitz-Stegun 7.1.26
/// erf approximation (|error| < 1.5e-7).
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    poly * (-x * x).exp()
}

/// Predicted ranking indices, best first. Ties broken by ascending id.
pub fn order_by_score_desc(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn check_pair(left: usize, right: usize, context: &'static str) -> Result<(), MetricsError> {
    if left == 0 {
        return Err(MetricsError::EmptyInput(context));
    }
    if left != right {
        return Err(MetricsError::SizeMismatch {
            left,
            right,
            context,
        });
    }
    Ok(())
}
