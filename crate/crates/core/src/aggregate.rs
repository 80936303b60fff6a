//! Fusion of node priors and edge preferences into a global score vector,
//! ranking, and accept/reject decisions.
//!
//! The prior floors scores at a small epsilon and normalizes. Each compared
//! pair keeps only the loser-to-winner direction; columns of the transition
//! matrix are uniform over out-neighbors, with dangling columns redirected to
//! the prior. The score vector is the fixed point of
//! `pi = lambda * M * pi + (1 - lambda) * z`, found by power iteration
//! starting from `z`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PaperId};

/// Floor for non-positive or missing prior scores.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-9;
/// Default damping factor (weight on graph propagation).
pub const DEFAULT_LAMBDA: f64 = 0.2;
/// Default L1 convergence tolerance for power iteration.
pub const DEFAULT_PPR_TOL: f64 = 1e-10;
/// Default iteration cap for power iteration.
pub const DEFAULT_PPR_MAX_ITERS: usize = 200;
/// Default acceptance rate.
pub const DEFAULT_GAMMA: f64 = 0.314;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("EmptyInput: {0}")]
    EmptyInput(&'static str),
    #[error("SizeMismatch: {left} vs {right} ({context})")]
    SizeMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },
    #[error("NotStochastic: column {col} sums to {sum}")]
    NotStochastic { col: usize, sum: f64 },
    #[error("InvalidParam: {0}")]
    InvalidParam(String),
}

/// Normalized node prior `z`.
#[derive(Debug, Clone)]
pub struct Prior {
    z: Vec<f64>,
    epsilon_floor: f64,
}

impl Prior {
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Build the prior from raw scores: entries are floored at `epsilon_floor`
/// (missing values become the floor) and normalized to sum 1.
pub fn build_prior(scores: &[Option<f64>], epsilon_floor: f64) -> Result<Prior, AggregateError> {
    if scores.is_empty() {
        return Err(AggregateError::EmptyInput("build_prior"));
    }
    if epsilon_floor <= 0.0 || !epsilon_floor.is_finite() {
        return Err(AggregateError::InvalidParam(format!(
            "epsilon_floor must be > 0, got {epsilon_floor}"
        )));
    }
    let floored: Vec<f64> = scores
        .iter()
        .map(|s| s.unwrap_or(epsilon_floor).max(epsilon_floor))
        .collect();
    let total: f64 = floored.iter().sum();
    Ok(Prior {
        z: floored.iter().map(|x| x / total).collect(),
        epsilon_floor,
    })
}

/// Directed comparison graph: for each compared pair only the edge from the
/// loser to the winner survives.
#[derive(Debug, Clone)]
pub struct PreferenceDigraph {
    out: Vec<Vec<usize>>,
}

impl PreferenceDigraph {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            out: vec![Vec::new(); num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.out.len()
    }

    /// Record that `winner` strictly outperformed `loser`.
    pub fn add_preference(&mut self, winner: usize, loser: usize) {
        self.out[loser].push(winner);
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out[node].len()
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out[node]
    }
}

/// Column-stochastic transition matrix. Non-dangling columns are uniform over
/// the node's out-neighbors; dangling columns equal the prior.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    z: Vec<f64>,
    /// Sorted out-neighbor lists; `None` marks a dangling column.
    out: Vec<Option<Vec<usize>>>,
}

pub fn build_transition(
    digraph: &PreferenceDigraph,
    prior: &Prior,
) -> Result<TransitionMatrix, AggregateError> {
    let n = digraph.num_nodes();
    if prior.len() != n {
        return Err(AggregateError::SizeMismatch {
            left: prior.len(),
            right: n,
            context: "prior length vs digraph nodes",
        });
    }
    let out = (0..n)
        .map(|v| {
            if digraph.out_degree(v) == 0 {
                None
            } else {
                let mut targets = digraph.out_neighbors(v).to_vec();
                targets.sort_unstable();
                targets.dedup();
                Some(targets)
            }
        })
        .collect();
    Ok(TransitionMatrix {
        n,
        z: prior.z().to_vec(),
        out,
    })
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        match &self.out[col] {
            Some(targets) => {
                if targets.binary_search(&row).is_ok() {
                    1.0 / targets.len() as f64
                } else {
                    0.0
                }
            }
            None => self.z[row],
        }
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        match &self.out[col] {
            Some(_) => 1.0,
            None => self.z.iter().sum(),
        }
    }

    fn validate(&self) -> Result<(), AggregateError> {
        for col in 0..self.n {
            let sum = self.column_sum(col);
            if (sum - 1.0).abs() > 1e-9 {
                return Err(AggregateError::NotStochastic { col, sum });
            }
        }
        Ok(())
    }

    /// `M * pi` using the sparse column structure.
    pub fn matvec(&self, pi: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.n];
        let mut dangling_mass = 0.0;
        for (col, targets) in self.out.iter().enumerate() {
            match targets {
                Some(targets) => {
                    let share = pi[col] / targets.len() as f64;
                    for &row in targets {
                        next[row] += share;
                    }
                }
                None => dangling_mass += pi[col],
            }
        }
        if dangling_mass != 0.0 {
            for (row, zr) in self.z.iter().enumerate() {
                next[row] += dangling_mass * zr;
            }
        }
        next
    }
}

/// Converged score vector.
#[derive(Debug, Clone)]
pub struct PprResult {
    pub pi: Vec<f64>,
    pub iterations_used: usize,
    /// L1 distance between the last two iterates; an upper bound on the
    /// fixed-point residual of the returned vector.
    pub residual: f64,
}

/// Power iteration for `pi = lambda * M * pi + (1 - lambda) * z`,
/// starting from `z`. Deterministic given inputs.
pub fn ppr(
    m: &TransitionMatrix,
    prior: &Prior,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PprResult, AggregateError> {
    if !(0.0..1.0).contains(&lambda) || lambda == 0.0 {
        return Err(AggregateError::InvalidParam(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    if m.n() != prior.len() {
        return Err(AggregateError::SizeMismatch {
            left: m.n(),
            right: prior.len(),
            context: "matrix vs prior",
        });
    }
    m.validate()?;
    let z = prior.z();
    let mut pi: Vec<f64> = z.to_vec();
    let mut iterations_used = 0;
    let mut residual = f64::INFINITY;
    while iterations_used < max_iters {
        let mv = m.matvec(&pi);
        let next: Vec<f64> = mv
            .iter()
            .zip(z)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        residual = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        iterations_used += 1;
        // the map is a lambda-contraction, so the returned iterate's true
        // residual is at most lambda * residual
        if residual <= tol {
            break;
        }
    }
    Ok(PprResult {
        pi,
        iterations_used,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Accept => write!(f, "accept"),
            Decision::Reject => write!(f, "reject"),
        }
    }
}

/// Global ranking restricted to submissions, with top-`floor(gamma * n)`
/// accept decisions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingResult {
    /// Submission ids by descending score.
    pub order: Vec<PaperId>,
    pub decisions: BTreeMap<PaperId, Decision>,
    pub accept_count: usize,
    /// Score per submission.
    pub scores: BTreeMap<PaperId, f64>,
}

/// `floor(gamma * n)` with a guard against values that are mathematically
/// integral but land just below an integer in floating point.
pub fn accept_count(gamma: f64, n: usize) -> usize {
    let x = gamma * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Sort submissions by descending score and accept the top `floor(gamma * n)`.
/// Ties break toward the higher prior, then the lexicographically smaller id.
pub fn rank_and_decide(
    ppr: &PprResult,
    prior: &Prior,
    corpus: &Corpus,
    gamma: f64,
) -> Result<RankingResult, AggregateError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(AggregateError::InvalidParam(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    if ppr.pi.len() != corpus.len() || prior.len() != corpus.len() {
        return Err(AggregateError::SizeMismatch {
            left: ppr.pi.len(),
            right: corpus.len(),
            context: "pi vs corpus",
        });
    }
    let mut subs = corpus.submission_indices();
    subs.sort_by(|&a, &b| {
        ppr.pi[b]
            .partial_cmp(&ppr.pi[a])
            .unwrap()
            .then(prior.z()[b].partial_cmp(&prior.z()[a]).unwrap())
            .then_with(|| corpus.paper(a).id.cmp(&corpus.paper(b).id))
    });
    let n = subs.len();
    let accepts = accept_count(gamma, n);
    let mut order = Vec::with_capacity(n);
    let mut decisions = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for (rank, &idx) in subs.iter().enumerate() {
        let id = corpus.paper(idx).id.clone();
        let decision = if rank < accepts {
            Decision::Accept
        } else {
            Decision::Reject
        };
        decisions.insert(id.clone(), decision);
        scores.insert(id.clone(), ppr.pi[idx]);
        order.push(id);
    }
    Ok(RankingResult {
        order,
        decisions,
        accept_count: accepts,
        scores,
    })
}

impl RankingResult {
    /// Rank of a submission (1-based), by id.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.order.iter().position(|x| x == id).map(|i| i + 1)
    }

    /// `rank,paper_id,pi,decision` table, best first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,paper_id,pi,decision\n");
        for (i, id) in self.order.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                id,
                self.scores[id],
                self.decisions[id]
            ));
        }
        out
    }

    /// One JSON record per submission, best first.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.order.iter().enumerate() {
            let record = serde_json::json!({
                "rank": i + 1,
                "paper_id": id,
                "pi": self.scores[id],
                "decision": self.decisions[id],
            });
            out.push_str(&record.to_string());
            out.push('\n');
        }
        out
    }
}
