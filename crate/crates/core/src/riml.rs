//! Reward-induced maximum likelihood data construction and loss evaluation.
//!
//! Node targets soften a scalar score into a distribution over anchors via
//! squared-distance rewards. Edge targets are weighted one-hot comparison
//! labels mined greedily under a minimum score-gap threshold. This module
//! produces training data and evaluates the objectives; it does not train.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PaperId};
use crate::signals::{AnchorScale, PromptSet};

/// Default smoothness of the node target distribution.
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Default target-distribution temperature.
pub const DEFAULT_TAU: f64 = 1.0;
/// Default minimum score gap for a mined comparison pair.
pub const DEFAULT_DELTA: f64 = 1.5;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RimlError {
    #[error("InvalidParam: {0}")]
    InvalidParam(String),
    #[error("SizeMismatch: {left} targets vs {right} predictions")]
    SizeMismatch { left: usize, right: usize },
    #[error("InvalidDistribution: {0}")]
    InvalidDistribution(String),
    #[error("MissingLabel: paper {0:?} has no ground-truth score")]
    MissingLabel(PaperId),
    #[error("UnknownPaper: {0:?}")]
    UnknownPaper(PaperId),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

/// Soft target distribution over anchors for one scored sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeTarget {
    pub paper_id: PaperId,
    pub y: Vec<f64>,
    pub sigma: f64,
    pub tau: f64,
    /// Sample weight; fixed to 1 for node samples.
    pub weight: f64,
}

/// Weighted one-hot comparison label for one mined pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeTarget {
    pub u_id: PaperId,
    pub v_id: PaperId,
    /// 1 iff the first paper's score is strictly higher.
    pub label: u8,
    /// Absolute score gap.
    pub weight: f64,
}

/// Reward-induced target distribution: softmax over -(s - a_k)^2 / (2 sigma^2),
/// tempered by tau.
pub fn node_target(
    s: f64,
    scale: &AnchorScale,
    sigma: f64,
    tau: f64,
) -> Result<NodeTarget, RimlError> {
    node_target_for(String::new(), s, scale, sigma, tau)
}

pub fn node_target_for(
    paper_id: PaperId,
    s: f64,
    scale: &AnchorScale,
    sigma: f64,
    tau: f64,
) -> Result<NodeTarget, RimlError> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(RimlError::InvalidParam(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(RimlError::InvalidParam(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    let rewards: Vec<f64> = scale
        .anchors()
        .iter()
        .map(|&a| -((s - a) * (s - a)) / (2.0 * sigma * sigma))
        .collect();
    let y = softmax_scaled(&rewards, tau);
    Ok(NodeTarget {
        paper_id,
        y,
        sigma,
        tau,
        weight: 1.0,
    })
}

/// Numerically stable softmax of `values / tau`.
fn softmax_scaled(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Greedy pair mining: shuffle ids by seed, then pair each unmatched id with
/// the unmatched partner of maximum score gap above the threshold. Each id
/// appears in at most one pair.
pub fn mine_pairs(
    labels: &HashMap<PaperId, f64>,
    delta: f64,
    seed: u64,
) -> Result<Vec<EdgeTarget>, RimlError> {
    if delta < 0.0 || !delta.is_finite() {
        return Err(RimlError::InvalidParam(format!(
            "delta must be >= 0, got {delta}"
        )));
    }
    let mut ids: Vec<&PaperId> = labels.keys().collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let mut used: Vec<bool> = vec![false; ids.len()];
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        if used[i] {
            continue;
        }
        let s_i = labels[ids[i]];
        let mut best: Option<(usize, f64)> = None;
        for (j, id_j) in ids.iter().enumerate() {
            if j == i || used[j] {
                continue;
            }
            let gap = (s_i - labels[*id_j]).abs();
            if gap <= delta {
                continue;
            }
            let better = match best {
                None => true,
                Some((bj, bgap)) => gap > bgap || (gap == bgap && ids[j] < ids[bj]),
            };
            if better {
                best = Some((j, gap));
            }
        }
        if let Some((j, gap)) = best {
            used[i] = true;
            used[j] = true;
            let s_j = labels[ids[j]];
            // the higher-scored paper goes first so the label is 1
            let (u, v) = if s_i > s_j {
                (ids[i], ids[j])
            } else {
                (ids[j], ids[i])
            };
            pairs.push(EdgeTarget {
                u_id: u.clone(),
                v_id: v.clone(),
                label: 1,
                weight: gap,
            });
        }
    }
    // deterministic output order regardless of shuffle
    pairs.sort_by(|a, b| (&a.u_id, &a.v_id).cmp(&(&b.u_id, &b.v_id)));
    Ok(pairs)
}

/// Mean cross-entropy between node targets and predicted distributions.
pub fn node_loss(targets: &[NodeTarget], predictions: &[Vec<f64>]) -> Result<f64, RimlError> {
    if targets.len() != predictions.len() {
        return Err(RimlError::SizeMismatch {
            left: targets.len(),
            right: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, p) in targets.iter().zip(predictions) {
        if t.y.len() != p.len() {
            return Err(RimlError::SizeMismatch {
                left: t.y.len(),
                right: p.len(),
            });
        }
        validate_distribution(p)?;
        total += t.weight * cross_entropy(&t.y, p);
    }
    Ok(total / targets.len() as f64)
}

/// Weighted mean cross-entropy over mined pairs. Normalized by the number of
/// pairs supplied.
pub fn edge_loss(targets: &[EdgeTarget], predictions: &[[f64; 2]]) -> Result<f64, RimlError> {
    if targets.len() != predictions.len() {
        return Err(RimlError::SizeMismatch {
            left: targets.len(),
            right: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, p) in targets.iter().zip(predictions) {
        validate_distribution(p)?;
        let one_hot = [f64::from(t.label == 0), f64::from(t.label == 1)];
        total += t.weight * cross_entropy(&one_hot, p);
    }
    Ok(total / targets.len() as f64)
}

fn cross_entropy(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .map(|(y, p)| -y * p.max(LOG_FLOOR).ln())
        .sum()
}

fn validate_distribution(p: &[f64]) -> Result<(), RimlError> {
    if p.iter().any(|&x| !(0.0..=1.0 + 1e-9).contains(&x)) {
        return Err(RimlError::InvalidDistribution(
            "entries must lie in [0, 1]".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(RimlError::InvalidDistribution(format!(
            "entries sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Parameters for training-set construction.
#[derive(Debug, Clone)]
pub struct ExportParams {
    pub sigma: f64,
    pub tau: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ExportParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            delta: DEFAULT_DELTA,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoringRecord {
    pub paper_id: PaperId,
    pub prompt: String,
    pub anchors: Vec<f64>,
    pub target: Vec<f64>,
    pub scalar: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub u_id: PaperId,
    pub v_id: PaperId,
    pub prompt: String,
    pub label: u8,
    pub weight: f64,
}

/// Render and write the two training files: one scoring record per labeled
/// paper and one comparison record per mined pair.
///
/// With `ids = None`, all labeled papers are exported and unlabeled papers are
/// skipped. With an explicit id list, an unlabeled or unknown id is an error.
pub fn export_training_set(
    corpus: &Corpus,
    scale: &AnchorScale,
    params: &ExportParams,
    prompts: &PromptSet,
    ids: Option<&[PaperId]>,
    scoring_path: &Path,
    comparison_path: &Path,
) -> Result<(usize, usize), RimlError> {
    let selected: Vec<usize> = match ids {
        Some(list) => {
            let mut out = Vec::with_capacity(list.len());
            for id in list {
                let idx = corpus
                    .index_of(id)
                    .ok_or_else(|| RimlError::UnknownPaper(id.clone()))?;
                if corpus.label(idx).is_none() {
                    return Err(RimlError::MissingLabel(id.clone()));
                }
                out.push(idx);
            }
            out
        }
        None => (0..corpus.len())
            .filter(|&i| corpus.label(i).is_some())
            .collect(),
    };

    let mut sw = BufWriter::new(File::create(scoring_path)?);
    let mut labels = HashMap::new();
    for &idx in &selected {
        let paper = corpus.paper(idx);
        let score = corpus.label(idx).expect("selection is labeled");
        labels.insert(paper.id.clone(), score);
        let target = node_target_for(paper.id.clone(), score, scale, params.sigma, params.tau)?;
        let record = ScoringRecord {
            paper_id: paper.id.clone(),
            prompt: prompts.render_score_training(&paper.text, score),
            anchors: scale.anchors().to_vec(),
            target: target.y,
            scalar: score,
        };
        serde_json::to_writer(&mut sw, &record).map_err(json_err)?;
        sw.write_all(b"\n")?;
    }
    sw.flush()?;

    let pairs = mine_pairs(&labels, params.delta, params.seed)?;
    let mut cw = BufWriter::new(File::create(comparison_path)?);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    for pair in &pairs {
        let u = corpus.get(&pair.u_id).expect("mined id is in corpus");
        let v = corpus.get(&pair.v_id).expect("mined id is in corpus");
        // balance which side the winner is presented on
        let winner_is_a = rng.random::<bool>();
        let prompt = if winner_is_a {
            prompts.render_compare_training(&u.text, &v.text, "A")
        } else {
            prompts.render_compare_training(&v.text, &u.text, "B")
        };
        let record = ComparisonRecord {
            u_id: pair.u_id.clone(),
            v_id: pair.v_id.clone(),
            prompt,
            label: pair.label,
            weight: pair.weight,
        };
        serde_json::to_writer(&mut cw, &record).map_err(json_err)?;
        cw.write_all(b"\n")?;
    }
    cw.flush()?;
    Ok((selected.len(), pairs.len()))
}

fn json_err(e: serde_json::Error) -> RimlError {
    RimlError::Io(std::io::Error::other(e))
}
