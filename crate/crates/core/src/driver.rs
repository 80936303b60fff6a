//! Outer pipeline loop: layer-by-layer graph growth, signal collection,
//! aggregation, and patience-based early stopping with best-round tracking.
//!
//! Evaluation mode measures a ranking metric against ground-truth labels each
//! round and stops after `patience_max` consecutive rounds without an
//! improvement above `epsilon_improve`. Deployment mode runs exactly
//! `fixed_t` rounds. Node priors are computed once per run; messages for a
//! node are the accumulated edge verdicts across all committed layers.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{
    build_prior, build_transition, ppr, rank_and_decide, AggregateError, Decision,
    PreferenceDigraph, Prior, RankingResult, DEFAULT_EPSILON_FLOOR, DEFAULT_GAMMA, DEFAULT_LAMBDA,
    DEFAULT_PPR_MAX_ITERS, DEFAULT_PPR_TOL,
};
use crate::corpus::{Corpus, PaperId};
use crate::graph::{CandidateGraph, EdgePolicy, GraphError, MatchState};
use crate::metrics::{self, EvalInput, MetricName, MetricReport, MetricsError};
use crate::signals::{SignalEngine, SignalError, SignalStore};

/// Default improvement threshold for early stopping.
pub const DEFAULT_EPSILON_IMPROVE: f64 = 0.01;
/// Default maximum patience.
pub const DEFAULT_PATIENCE_MAX: usize = 3;
/// Default number of rounds in deployment mode.
pub const DEFAULT_FIXED_T: usize = 5;
/// Default backend in-flight limit.
pub const DEFAULT_IN_FLIGHT: usize = 8;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("LabelRequired: {0}")]
    LabelRequired(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Evaluation,
    Deployment,
}

impl FromStr for RunMode {
    type Err = DriverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "evaluation" | "eval" => Ok(Self::Evaluation),
            "deployment" | "deploy" => Ok(Self::Deployment),
            other => Err(DriverError::InvalidConfig(format!(
                "unknown mode {other:?}"
            ))),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Evaluation => write!(f, "evaluation"),
            Self::Deployment => write!(f, "deployment"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: RunMode,
    pub epsilon_improve: f64,
    pub patience_max: usize,
    pub fixed_t: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub metric: MetricName,
    pub seed: u64,
    pub edge_policy: EdgePolicy,
    pub epsilon_floor: f64,
    pub ppr_tol: f64,
    pub ppr_max_iters: usize,
    pub in_flight_limit: usize,
    /// Per-round checkpoints land here when set.
    pub run_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Deployment,
            epsilon_improve: DEFAULT_EPSILON_IMPROVE,
            patience_max: DEFAULT_PATIENCE_MAX,
            fixed_t: DEFAULT_FIXED_T,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            metric: MetricName::Spearman,
            seed: 0,
            edge_policy: EdgePolicy::default(),
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            ppr_tol: DEFAULT_PPR_TOL,
            ppr_max_iters: DEFAULT_PPR_MAX_ITERS,
            in_flight_limit: DEFAULT_IN_FLIGHT,
            run_dir: None,
        }
    }
}

impl RunConfig {
    /// Flat key=value snapshot of the resolved run parameters.
    pub fn snapshot(&self) -> String {
        let policy = match (self.edge_policy.synchronic, self.edge_policy.diachronic) {
            (true, true) => "both",
            (true, false) => "synchronic",
            (false, true) => "diachronic",
            (false, false) => "none",
        };
        format!(
            "mode={}\nepsilon_improve={}\npatience={}\nfixed_t={}\ngamma={}\nlambda={}\nmetric={}\nseed={}\nedge_policy={}\nepsilon_floor={}\nppr_tol={}\nppr_max_iters={}\nin_flight_limit={}\n",
            self.mode,
            self.epsilon_improve,
            self.patience_max,
            self.fixed_t,
            self.gamma,
            self.lambda,
            self.metric,
            self.seed,
            policy,
            self.epsilon_floor,
            self.ppr_tol,
            self.ppr_max_iters,
            self.in_flight_limit
        )
    }
}

/// One completed round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub t: usize,
    pub layer_edges: usize,
    /// Metric value this round; absent in deployment mode.
    pub eta: Option<f64>,
    /// Best metric value after this round.
    pub eta_best: Option<f64>,
    /// Patience counter after this round.
    pub patience: usize,
    pub improved: bool,
    pub ranking: RankingResult,
    pub elapsed_ms: u128,
    /// Cumulative backend round-trips after this round.
    pub backend_calls: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    t: usize,
    layer_edges: usize,
    eta: Option<f64>,
    eta_best: Option<f64>,
    patience: usize,
    improved: bool,
    elapsed_ms: u128,
    backend_calls: u64,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub best_t: usize,
    pub best_ranking: RankingResult,
    pub trace: Vec<RoundRecord>,
    pub state: MatchState,
    pub store: SignalStore,
    pub prior: Prior,
}

/// Run the full pipeline. See the module docs for the loop semantics.
pub fn run_pipeline(
    corpus: &Corpus,
    config: &RunConfig,
    engine: &SignalEngine,
) -> Result<PipelineOutcome, DriverError> {
    match config.mode {
        RunMode::Evaluation => {
            if !corpus.submissions_labeled() {
                return Err(DriverError::LabelRequired(
                    "evaluation mode requires ground-truth labels for every submission".into(),
                ));
            }
        }
        RunMode::Deployment => {
            if config.fixed_t == 0 {
                return Err(DriverError::InvalidConfig(
                    "deployment mode requires fixed_t >= 1".into(),
                ));
            }
        }
    }

    let ids: Vec<String> = corpus.papers().iter().map(|p| p.id.clone()).collect();
    if let Some(dir) = &config.run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), config.snapshot())?;
        // the trace is append-only within a run; start it fresh
        fs::write(dir.join("trace.jsonl"), "")?;
    }

    let graph = CandidateGraph::from_corpus(corpus, &config.edge_policy);
    let mut state = MatchState::new(corpus.len());
    let mut store = SignalStore::new();

    // node priors: scored once, reused every round; papers the backend cannot
    // score (oracle without a label) enter the prior as missing values
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let scored = parallel_try_map(&indices, config.in_flight_limit, |&i| {
        match engine.score_node(corpus.paper(i)) {
            Ok(signal) => Ok(Some(signal)),
            Err(SignalError::MissingLabel(_)) => Ok(None),
            Err(e) => Err(DriverError::from(e)),
        }
    })?;
    let mut scores: Vec<Option<f64>> = vec![None; corpus.len()];
    for (i, signal) in scored.into_iter().enumerate() {
        if let Some(signal) = signal {
            scores[i] = Some(signal.scalar_score);
            store.insert_node(signal);
        }
    }
    let prior = build_prior(&scores, config.epsilon_floor)?;

    let labels: HashMap<PaperId, f64> = (0..corpus.len())
        .filter_map(|i| corpus.label(i).map(|s| (corpus.paper(i).id.clone(), s)))
        .collect();

    let mut trace: Vec<RoundRecord> = Vec::new();
    let mut best: Option<(f64, usize, RankingResult)> = None;
    let mut patience = 0usize;
    let mut t = 0usize;
    loop {
        t += 1;
        let round_start = Instant::now();
        let layer = graph.solve_layer(state.cumulative(), config.edge_policy.mode, t)?;
        let layer_edges = layer.edges.len();
        let new_pairs: Vec<(usize, usize)> =
            layer.edges.iter().map(|(e, _)| e.endpoints()).collect();
        state = state.commit_layer(layer)?;

        // messages for the new edges; earlier layers stay in the store
        let verdicts = parallel_try_map(&new_pairs, config.in_flight_limit, |&(u, v)| {
            engine
                .compare_canonical(corpus.paper(u), corpus.paper(v))
                .map_err(DriverError::from)
        })?;
        for verdict in verdicts {
            store.insert_verdict(verdict);
        }

        // aggregation over every committed edge
        let mut digraph = PreferenceDigraph::new(corpus.len());
        for edge in state.cumulative() {
            let (u, v) = edge.endpoints();
            let verdict = store
                .verdict(&ids[u], &ids[v])
                .expect("every committed edge has a verdict");
            let winner_idx = corpus.index_of(&verdict.winner_id).expect("known id");
            let loser_idx = if winner_idx == u { v } else { u };
            digraph.add_preference(winner_idx, loser_idx);
        }
        let transition = build_transition(&digraph, &prior)?;
        let solution = ppr(
            &transition,
            &prior,
            config.lambda,
            config.ppr_tol,
            config.ppr_max_iters,
        )?;
        let ranking = rank_and_decide(&solution, &prior, corpus, config.gamma)?;

        let mut improved = false;
        let eta = match config.mode {
            RunMode::Evaluation => {
                let eta = compute_eta(&ranking, &labels, config.metric)?;
                let eta_best = best
                    .as_ref()
                    .map(|(e, _, _)| *e)
                    .unwrap_or(f64::NEG_INFINITY);
                if eta - eta_best > config.epsilon_improve {
                    best = Some((eta, t, ranking.clone()));
                    patience = 0;
                    improved = true;
                } else {
                    patience += 1;
                }
                Some(eta)
            }
            RunMode::Deployment => None,
        };
        let record = RoundRecord {
            t,
            layer_edges,
            eta,
            eta_best: best.as_ref().map(|(e, _, _)| *e),
            patience,
            improved,
            ranking: ranking.clone(),
            elapsed_ms: round_start.elapsed().as_millis(),
            backend_calls: engine.backend_calls(),
        };
        if let Some(dir) = &config.run_dir {
            checkpoint_round(dir, &record, &state, &ids)?;
        }
        trace.push(record);

        match config.mode {
            RunMode::Evaluation => {
                if patience >= config.patience_max {
                    break;
                }
            }
            RunMode::Deployment => {
                if t >= config.fixed_t {
                    best = Some((f64::NAN, t, ranking));
                    break;
                }
            }
        }
    }

    let (_, best_t, best_ranking) = best.expect("at least one round ran");
    if let Some(dir) = &config.run_dir {
        let mut edges = Vec::new();
        state.write_edge_list(&ids, &mut edges)?;
        fs::write(dir.join("edges.txt"), edges)?;
        let mut signals = Vec::new();
        store.write_jsonl(&mut signals).map_err(DriverError::from)?;
        fs::write(dir.join("signals.jsonl"), signals)?;
        fs::write(dir.join("ranking.csv"), best_ranking.to_csv())?;
        fs::write(dir.join("ranking.jsonl"), best_ranking.to_jsonl())?;
    }
    Ok(PipelineOutcome {
        best_t,
        best_ranking,
        trace,
        state,
        store,
        prior,
    })
}

/// Performance of a ranking against ground-truth labels. Ground-truth
/// decisions for the decision metrics take the same top-`accept_count` rule
/// the engine uses, applied to the labels.
pub fn compute_eta(
    ranking: &RankingResult,
    labels: &HashMap<PaperId, f64>,
    metric: MetricName,
) -> Result<f64, DriverError> {
    let input = eval_input(ranking, labels)?;
    let value = match metric {
        MetricName::Accuracy => metrics::accuracy(&input.pred_decisions, &input.true_decisions)?,
        MetricName::MacroF1 => metrics::macro_f1(&input.pred_decisions, &input.true_decisions)?,
        MetricName::Auc => metrics::auc(&input.pred_scores, &input.true_decisions)?,
        MetricName::Spearman => metrics::spearman(&input.pred_scores, &input.true_scores)?,
        MetricName::KendallTauB => metrics::kendall_tau_b(&input.pred_scores, &input.true_scores)?,
        MetricName::NdcgAt10 => {
            let order = metrics::order_by_score_desc(&input.ids, &input.pred_scores);
            let rels: Vec<f64> = order.iter().map(|&i| input.true_scores[i]).collect();
            metrics::ndcg_at_k(&rels, 10)?
        }
        MetricName::Average => MetricReport::compute(&input)?.average,
    };
    Ok(value)
}

/// Align a ranking with labels into an evaluation input.
pub fn eval_input(
    ranking: &RankingResult,
    labels: &HashMap<PaperId, f64>,
) -> Result<EvalInput, DriverError> {
    let ids = ranking.order.clone();
    let mut true_scores = Vec::with_capacity(ids.len());
    for id in &ids {
        let score = labels.get(id).ok_or_else(|| {
            DriverError::LabelRequired(format!("ranked submission {id:?} has no label"))
        })?;
        true_scores.push(*score);
    }
    let pred_scores: Vec<f64> = ids.iter().map(|id| ranking.scores[id]).collect();
    let pred_decisions: Vec<bool> = ids
        .iter()
        .map(|id| ranking.decisions[id] == Decision::Accept)
        .collect();
    // truth decisions: same accept budget, applied to the labels
    let mut by_label: Vec<usize> = (0..ids.len()).collect();
    by_label.sort_by(|&a, &b| {
        true_scores[b]
            .partial_cmp(&true_scores[a])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let mut true_decisions = vec![false; ids.len()];
    for &i in by_label.iter().take(ranking.accept_count) {
        true_decisions[i] = true;
    }
    Ok(EvalInput::new(
        ids,
        pred_scores,
        pred_decisions,
        true_scores,
        true_decisions,
    )?)
}

fn checkpoint_round(
    dir: &Path,
    record: &RoundRecord,
    state: &MatchState,
    ids: &[String],
) -> Result<(), DriverError> {
    let layer = state.layers().last().expect("round committed a layer");
    let mut buf = Vec::new();
    for (edge, weight) in &layer.edges {
        let (u, v) = edge.endpoints();
        buf.extend_from_slice(
            format!("{},{},{},{}\n", layer.iteration, ids[u], ids[v], weight).as_bytes(),
        );
    }
    fs::write(dir.join(format!("round_{:03}_edges.txt", record.t)), buf)?;
    fs::write(
        dir.join(format!("round_{:03}_ranking.csv", record.t)),
        record.ranking.to_csv(),
    )?;
    let line = TraceLine {
        t: record.t,
        layer_edges: record.layer_edges,
        eta: record.eta,
        eta_best: record.eta_best,
        patience: record.patience,
        improved: record.improved,
        elapsed_ms: record.elapsed_ms,
        backend_calls: record.backend_calls,
    };
    let mut trace_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("trace.jsonl"))?;
    use std::io::Write;
    writeln!(
        trace_file,
        "{}",
        serde_json::to_string(&line).map_err(std::io::Error::other)?
    )?;
    Ok(())
}

/// Run `f` over `items` on up to `limit` worker threads, preserving order.
/// The first error (by item index) wins.
fn parallel_try_map<T, R, E, F>(items: &[T], limit: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let workers = limit.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R, E>>>> =
        (0..items.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}
