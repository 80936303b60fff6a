//! Pluggable node-scorer and edge-comparator backends producing review
//! signals, with response caching, prompt templating, and the iterative
//! prompt-evolving loop.

mod backend;
mod cache;
mod prompts;
mod store;

pub use backend::{
    Backend, BackendConfig, BackendKind, BackendRequest, BackendResponse, BackendTask, NoiseParams,
    OracleBackend, RemoteBackend, ReplayBackend, RetryPolicy,
};
pub use cache::{CachedEntry, SignalCache};
pub use prompts::{PromptSet, DEFAULT_CRITERIA};
pub use store::SignalStore;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Paper, PaperId};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("BackendUnavailable: {details}")]
    BackendUnavailable { details: String },
    #[error("MalformedResponse: {details}")]
    MalformedResponse { details: String },
    #[error("MissingLabel: {0}")]
    MissingLabel(String),
    #[error("InvalidParam: {0}")]
    InvalidParam(String),
    #[error("Io: {0}")]
    Io(String),
}

/// Strictly increasing score anchors approximating the continuous score space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorScale {
    anchors: Vec<f64>,
}

impl Default for AnchorScale {
    /// The ICLR rating-scale levels.
    fn default() -> Self {
        Self {
            anchors: vec![1.0, 3.0, 5.0, 6.0, 8.0, 10.0],
        }
    }
}

impl AnchorScale {
    pub fn new(anchors: Vec<f64>) -> Result<Self, SignalError> {
        if anchors.len() < 2 {
            return Err(SignalError::InvalidParam(
                "anchor scale needs at least 2 anchors".into(),
            ));
        }
        if anchors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SignalError::InvalidParam(
                "anchors must be strictly increasing".into(),
            ));
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Index of the anchor nearest to `x`; midpoints resolve to the lower one.
    pub fn nearest_index(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &a) in self.anchors.iter().enumerate() {
            let d = (x - a).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }

    pub fn expectation(&self, distribution: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(distribution)
            .map(|(a, p)| a * p)
            .sum()
    }

    fn cache_repr(&self) -> String {
        self.anchors
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A backend verdict on a single paper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSignal {
    pub paper_id: PaperId,
    /// Probability vector over the anchor scale.
    pub distribution: Vec<f64>,
    pub rationale: String,
    /// Expectation of the distribution over anchors.
    pub scalar_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    First,
    Second,
}

/// A backend verdict on an ordered pair, relative to call order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSignal {
    pub pair: (PaperId, PaperId),
    pub winner: Winner,
    pub rationale: String,
}

impl EdgeSignal {
    pub fn winner_id(&self) -> &PaperId {
        match self.winner {
            Winner::First => &self.pair.0,
            Winner::Second => &self.pair.1,
        }
    }

    pub fn loser_id(&self) -> &PaperId {
        match self.winner {
            Winner::First => &self.pair.1,
            Winner::Second => &self.pair.0,
        }
    }
}

/// Cache-stable comparison verdict keyed by the unordered pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanonicalVerdict {
    pub low_id: PaperId,
    pub high_id: PaperId,
    pub winner_id: PaperId,
    pub rationale: String,
}

impl CanonicalVerdict {
    pub fn to_edge_signal(&self, first: &str, second: &str) -> EdgeSignal {
        let winner = if self.winner_id == first {
            Winner::First
        } else {
            Winner::Second
        };
        EdgeSignal {
            pair: (first.to_string(), second.to_string()),
            winner,
            rationale: self.rationale.clone(),
        }
    }
}

/// Scoring and comparison front-end over one backend, with caching and
/// position randomization.
pub struct SignalEngine {
    backend: Box<dyn Backend>,
    cache: Option<SignalCache>,
    prompts: PromptSet,
    scale: AnchorScale,
    seed: u64,
    calls: AtomicU64,
}

impl SignalEngine {
    /// Build the backend named by `config` and wrap it. The oracle kind
    /// requires labels in the corpus; the remote kind requires an endpoint.
    pub fn from_config(
        config: &BackendConfig,
        corpus: &Corpus,
        prompts: PromptSet,
        scale: AnchorScale,
        seed: u64,
    ) -> Result<Self, SignalError> {
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::Oracle => Box::new(OracleBackend::new(
                corpus,
                scale.clone(),
                config.noise.clone(),
            )?),
            BackendKind::Remote => Box::new(RemoteBackend::new(config)?),
            BackendKind::Replay => {
                let mut replay = match &config.replay_dir {
                    Some(dir) => ReplayBackend::from_dir(dir.clone()),
                    None => ReplayBackend::new(),
                };
                replay = replay.with_default("A\nreplay default");
                Box::new(replay)
            }
        };
        let cache = match &config.cache_dir {
            Some(dir) => Some(SignalCache::new(dir.clone())?),
            None => None,
        };
        Ok(Self {
            backend,
            cache,
            prompts,
            scale,
            seed,
            calls: AtomicU64::new(0),
        })
    }

    /// Wrap an already-built backend (used by tests and custom integrations).
    pub fn new(
        backend: Box<dyn Backend>,
        cache: Option<SignalCache>,
        prompts: PromptSet,
        scale: AnchorScale,
        seed: u64,
    ) -> Self {
        Self {
            backend,
            cache,
            prompts,
            scale,
            seed,
            calls: AtomicU64::new(0),
        }
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn scale(&self) -> &AnchorScale {
        &self.scale
    }

    /// Number of backend round-trips (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.backend.respond(request)
    }

    /// Point-wise quality estimate for one paper.
    pub fn score_node(&self, paper: &Paper) -> Result<NodeSignal, SignalError> {
        if paper.text.is_empty() {
            return Err(SignalError::InvalidParam(format!(
                "paper {:?} has empty text",
                paper.id
            )));
        }
        let prompt = self.prompts.render_score(&paper.text);
        let key = SignalCache::content_key(&[
            "score",
            &self.backend.id(),
            &self.prompts.template_hash(),
            &self.scale.cache_repr(),
            &sha_hex(&paper.text),
            &self.seed.to_string(),
        ]);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key) {
                if let Some(node) = entry.node {
                    return Ok(node);
                }
            }
        }
        let response = self.respond(&BackendRequest {
            task: BackendTask::Score {
                paper_id: paper.id.clone(),
            },
            prompt,
        })?;
        let signal = parse_node_signal(&paper.id, &response, &self.scale)?;
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedEntry {
                    raw: response.text.clone(),
                    anchor_probs: response.anchor_probs.clone(),
                    node: Some(signal.clone()),
                    edge: None,
                },
            )?;
        }
        Ok(signal)
    }

    /// Strict pairwise preference between two distinct papers. Presentation
    /// order is randomized by a seed keyed to the unordered pair and inverted
    /// on the response, so both call orders name the same winner.
    pub fn compare_pair(&self, a: &Paper, b: &Paper) -> Result<EdgeSignal, SignalError> {
        if a.id == b.id {
            return Err(SignalError::InvalidParam(format!(
                "cannot compare paper {:?} with itself",
                a.id
            )));
        }
        let verdict = self.compare_canonical(a, b)?;
        Ok(verdict.to_edge_signal(&a.id, &b.id))
    }

    /// Comparison verdict stored against the unordered pair.
    pub fn compare_canonical(&self, a: &Paper, b: &Paper) -> Result<CanonicalVerdict, SignalError> {
        let (low, high) = if a.id <= b.id { (a, b) } else { (b, a) };
        let key = SignalCache::content_key(&[
            "compare",
            &self.backend.id(),
            &self.prompts.template_hash(),
            &sha_hex(&low.text),
            &sha_hex(&high.text),
            &self.seed.to_string(),
        ]);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key) {
                if let Some(edge) = entry.edge {
                    return Ok(edge);
                }
            }
        }
        // position randomization, deterministic per (seed, unordered pair)
        let swap = position_swap(self.seed, &low.id, &high.id);
        let (first, second) = if swap { (high, low) } else { (low, high) };
        let prompt = self.prompts.render_compare(&first.text, &second.text);
        let response = self.respond(&BackendRequest {
            task: BackendTask::Compare {
                first_id: first.id.clone(),
                second_id: second.id.clone(),
            },
            prompt,
        })?;
        let (first_wins, rationale) = parse_choice(&response.text)?;
        let winner_id = if first_wins {
            first.id.clone()
        } else {
            second.id.clone()
        };
        let verdict = CanonicalVerdict {
            low_id: low.id.clone(),
            high_id: high.id.clone(),
            winner_id,
            rationale,
        };
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedEntry {
                    raw: response.text.clone(),
                    anchor_probs: None,
                    node: None,
                    edge: Some(verdict.clone()),
                },
            )?;
        }
        Ok(verdict)
    }

    /// Raw completion for consolidation and prompt evolution. Cached by the
    /// task label and prompt content.
    pub fn complete(&self, task: BackendTask, prompt: String) -> Result<String, SignalError> {
        let key = SignalCache::content_key(&[
            "complete",
            &self.backend.id(),
            &task.replay_key(),
            &sha_hex(&prompt),
            &self.seed.to_string(),
        ]);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key) {
                return Ok(entry.raw);
            }
        }
        let response = self.respond(&BackendRequest { task, prompt })?;
        if let Some(cache) = &self.cache {
            cache.put(
                &key,
                &CachedEntry {
                    raw: response.text.clone(),
                    anchor_probs: None,
                    node: None,
                    edge: None,
                },
            )?;
        }
        Ok(response.text)
    }
}

fn sha_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    prompts::hex(&hasher.finalize())
}

fn position_swap(seed: u64, low_id: &str, high_id: &str) -> bool {
    let key = SignalCache::content_key(&["swap", &seed.to_string(), low_id, high_id]);
    // first hex nibble decides
    u8::from_str_radix(&key[..1], 16).unwrap_or(0) % 2 == 1
}

/// Parse a scoring response: leading scored number, then rationale. The
/// distribution comes from backend-supplied anchor probabilities when present,
/// otherwise a point mass at the anchor nearest the parsed verdict.
fn parse_node_signal(
    paper_id: &str,
    response: &BackendResponse,
    scale: &AnchorScale,
) -> Result<NodeSignal, SignalError> {
    let text = response.text.trim_start();
    let token: String = text.chars().take_while(|c| !c.is_whitespace()).collect();
    let scalar: f64 = token
        .trim_end_matches(['.', ',', ':'])
        .parse()
        .map_err(|_| SignalError::MalformedResponse {
            details: format!("scoring response must begin with a number, got {token:?}"),
        })?;
    if !scalar.is_finite() {
        return Err(SignalError::MalformedResponse {
            details: format!("non-finite score {scalar}"),
        });
    }
    let rationale = text[token.len()..].trim().to_string();
    let distribution = match &response.anchor_probs {
        Some(probs) => {
            if probs.len() != scale.len() {
                return Err(SignalError::MalformedResponse {
                    details: format!(
                        "anchor distribution has {} entries, scale has {}",
                        probs.len(),
                        scale.len()
                    ),
                });
            }
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|p| *p < -1e-12) || (sum - 1.0).abs() > 1e-6 {
                return Err(SignalError::MalformedResponse {
                    details: format!("anchor distribution sums to {sum}"),
                });
            }
            // exact renormalization kills accumulated drift
            probs.iter().map(|p| p.max(0.0) / sum).collect()
        }
        None => {
            let mut dist = vec![0.0; scale.len()];
            dist[scale.nearest_index(scalar)] = 1.0;
            dist
        }
    };
    let scalar_score = scale.expectation(&distribution);
    Ok(NodeSignal {
        paper_id: paper_id.to_string(),
        distribution,
        rationale,
        scalar_score,
    })
}

/// Parse a comparison response: leading choice letter, then rationale.
fn parse_choice(text: &str) -> Result<(bool, String), SignalError> {
    let trimmed = text.trim_start();
    let token: String = trimmed.chars().take_while(|c| !c.is_whitespace()).collect();
    let first_wins = match token.trim_end_matches(['.', ',', ':']) {
        "A" | "a" => true,
        "B" | "b" => false,
        other => {
            return Err(SignalError::MalformedResponse {
                details: format!("comparison response must begin with A or B, got {other:?}"),
            })
        }
    };
    let rationale = trimmed[token.len()..].trim().to_string();
    Ok((first_wins, rationale))
}

/// One round of the prompt-evolving loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveRound {
    pub round: usize,
    pub candidate: String,
    /// Raw judger verdicts, one per sample.
    pub verdicts: Vec<String>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOutcome {
    pub final_criteria: String,
    pub lineage: Vec<EvolveRound>,
}

/// Iteratively refine review criteria over `rounds` rounds. Each round the
/// evolver proposes a candidate; the judger compares answers produced under
/// the incumbent and the candidate (directly comparing the criteria texts
/// when no sample papers are given) and the candidate replaces the incumbent
/// only on a winning majority.
pub fn evolve_prompt(
    initial: &str,
    rounds: usize,
    evolver: &SignalEngine,
    judger: &SignalEngine,
    samples: &[&Paper],
) -> Result<EvolveOutcome, SignalError> {
    let mut current = initial.to_string();
    let mut lineage = Vec::new();
    for round in 1..=rounds {
        let evolver_prompt = evolver
            .prompts()
            .render_evolver(&evolver.prompts().score_template, &current);
        let candidate = evolver.complete(
            BackendTask::FreeForm {
                label: format!("evolve:{round}"),
            },
            evolver_prompt,
        )?;
        let mut verdicts = Vec::new();
        let mut candidate_wins = 0usize;
        let mut total = 0usize;
        if samples.is_empty() {
            let verdict = judger.complete(
                BackendTask::FreeForm {
                    label: format!("judge:{round}"),
                },
                judger.prompts().render_judger(&current, &candidate),
            )?;
            if verdict.trim_start().starts_with('B') {
                candidate_wins += 1;
            }
            total += 1;
            verdicts.push(verdict);
        } else {
            for paper in samples {
                let answer_a = evolver.complete(
                    BackendTask::FreeForm {
                        label: format!("answer:{round}:{}:incumbent", paper.id),
                    },
                    evolver.prompts().render_score_with(&current, &paper.text),
                )?;
                let answer_b = evolver.complete(
                    BackendTask::FreeForm {
                        label: format!("answer:{round}:{}:candidate", paper.id),
                    },
                    evolver.prompts().render_score_with(&candidate, &paper.text),
                )?;
                let verdict = judger.complete(
                    BackendTask::FreeForm {
                        label: format!("judge:{round}:{}", paper.id),
                    },
                    judger.prompts().render_judger(&answer_a, &answer_b),
                )?;
                if verdict.trim_start().starts_with('B') {
                    candidate_wins += 1;
                }
                total += 1;
                verdicts.push(verdict);
            }
        }
        // monotone acceptance: replace only on strict majority for the candidate
        let accepted = candidate_wins * 2 > total;
        if accepted {
            current = candidate.clone();
        }
        lineage.push(EvolveRound {
            round,
            candidate,
            verdicts,
            accepted,
        });
    }
    Ok(EvolveOutcome {
        final_criteria: current,
        lineage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Embedding, Paper, Role};
    use std::collections::HashMap;
    use std::sync::atomic::AtomicUsize;

    fn paper(id: &str, text: &str) -> Paper {
        Paper {
            id: id.into(),
            role: Role::Submission,
            venue: "v".into(),
            year: 2025,
            text: text.into(),
        }
    }

    fn oracle_engine(labels: &[(&str, f64)], noise: NoiseParams) -> SignalEngine {
        let papers: Vec<Paper> = labels
            .iter()
            .map(|(id, _)| paper(id, &format!("body {id}")))
            .collect();
        let embeddings: Vec<Embedding> = labels
            .iter()
            .map(|(id, _)| Embedding {
                paper_id: id.to_string(),
                vector: vec![1.0],
            })
            .collect();
        let label_map: HashMap<String, f64> =
            labels.iter().map(|(id, s)| (id.to_string(), *s)).collect();
        let corpus = Corpus::from_parts(papers, embeddings, label_map).unwrap();
        let config = BackendConfig {
            kind: BackendKind::Oracle,
            noise,
            ..BackendConfig::default()
        };
        SignalEngine::from_config(
            &config,
            &corpus,
            PromptSet::default(),
            AnchorScale::default(),
            7,
        )
        .unwrap()
    }

    #[test]
    fn anchor_scale_validation() {
        assert!(AnchorScale::new(vec![1.0]).is_err());
        assert!(AnchorScale::new(vec![1.0, 1.0]).is_err());
        assert!(AnchorScale::new(vec![3.0, 1.0]).is_err());
        let scale = AnchorScale::new(vec![1.0, 5.0, 9.0]).unwrap();
        assert_eq!(scale.nearest_index(4.0), 1);
        assert_eq!(scale.nearest_index(3.0), 0, "midpoint resolves low");
    }

    #[test]
    fn score_node_anchor_label_echoes() {
        let engine = oracle_engine(&[("p1", 8.0)], NoiseParams::default());
        let signal = engine.score_node(&paper("p1", "body p1")).unwrap();
        assert!((signal.scalar_score - 8.0).abs() < 1e-12);
        assert_eq!(signal.distribution[4], 1.0);
        assert!((signal.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn score_node_soft_label_expectation() {
        let engine = oracle_engine(&[("p1", 7.0)], NoiseParams::default());
        let signal = engine.score_node(&paper("p1", "body p1")).unwrap();
        // expectation of the softened distribution, computed directly
        let anchors = [1.0, 3.0, 5.0, 6.0, 8.0, 10.0];
        let raw: Vec<f64> = anchors
            .iter()
            .map(|a| (-(7.0 - a) * (7.0 - a) / 2.0f64).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        let expected: f64 = anchors.iter().zip(&raw).map(|(a, e)| a * e / sum).sum();
        assert!((signal.scalar_score - expected).abs() < 1e-12);
        assert!((signal.distribution[3] - signal.distribution[4]).abs() < 1e-12);
    }

    #[test]
    fn compare_pair_examples() {
        let engine = oracle_engine(&[("p1", 8.0), ("p2", 3.0)], NoiseParams::default());
        let signal = engine
            .compare_pair(&paper("p1", "body p1"), &paper("p2", "body p2"))
            .unwrap();
        assert_eq!(signal.winner, Winner::First);
        assert_eq!(signal.winner_id(), "p1");

        let engine = oracle_engine(&[("a", 5.0), ("b", 5.0)], NoiseParams::default());
        let signal = engine
            .compare_pair(&paper("b", "body b"), &paper("a", "body a"))
            .unwrap();
        assert_eq!(signal.winner_id(), "a", "equal labels: smaller id wins");

        let noise = NoiseParams {
            flip_probability: 1.0,
            ..NoiseParams::default()
        };
        let engine = oracle_engine(&[("p1", 8.0), ("p2", 3.0)], noise);
        let signal = engine
            .compare_pair(&paper("p1", "body p1"), &paper("p2", "body p2"))
            .unwrap();
        assert_eq!(signal.winner, Winner::Second, "full flip inverts");
    }

    #[test]
    fn antisymmetry_under_swap() {
        let engine = oracle_engine(&[("p1", 8.0), ("p2", 3.0)], NoiseParams::default());
        let a = paper("p1", "body p1");
        let b = paper("p2", "body p2");
        let ab = engine.compare_pair(&a, &b).unwrap();
        let ba = engine.compare_pair(&b, &a).unwrap();
        assert_eq!(ab.winner_id(), ba.winner_id());
    }

    #[test]
    fn oracle_consistency_over_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<(String, f64)> = (0..10)
            .map(|i| (format!("p{i}"), 1.0 + 9.0 * rng.random::<f64>()))
            .collect();
        let refs: Vec<(&str, f64)> = labels.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        let engine = oracle_engine(&refs, NoiseParams::default());
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                let (ref id_a, s_a) = labels[i];
                let (ref id_b, s_b) = labels[j];
                if s_a == s_b {
                    continue;
                }
                let signal = engine
                    .compare_pair(
                        &paper(id_a, &format!("body {id_a}")),
                        &paper(id_b, &format!("body {id_b}")),
                    )
                    .unwrap();
                let expect = if s_a > s_b { id_a } else { id_b };
                assert_eq!(signal.winner_id(), expect);
            }
        }
    }

    /// Counts respond() calls to observe caching.
    struct CountingBackend {
        inner: ReplayBackend,
        hits: AtomicUsize,
    }

    impl Backend for CountingBackend {
        fn id(&self) -> String {
            "counting".into()
        }
        fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError> {
            self.hits.fetch_add(1, Ordering::SeqCst);
            self.inner.respond(request)
        }
    }

    #[test]
    fn cache_prevents_second_backend_call() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CountingBackend {
            inner: ReplayBackend::new().with_default("7\ncached rationale"),
            hits: AtomicUsize::new(0),
        };
        let cache = SignalCache::new(dir.path().to_path_buf()).unwrap();
        let engine = SignalEngine::new(
            Box::new(backend),
            Some(cache),
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let p = paper("p1", "text");
        let first = engine.score_node(&p).unwrap();
        let second = engine.score_node(&p).unwrap();
        assert_eq!(engine.backend_calls(), 1, "second call served from cache");
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap(),
            "byte-identical signals"
        );
    }

    #[test]
    fn malformed_score_response() {
        let engine = SignalEngine::new(
            Box::new(ReplayBackend::new().with_default("great paper, 8/10")),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        assert!(matches!(
            engine.score_node(&paper("p1", "text")),
            Err(SignalError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn point_mass_for_text_only_backend() {
        let engine = SignalEngine::new(
            Box::new(ReplayBackend::new().with_default("7.3\nplain text verdict")),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let signal = engine.score_node(&paper("p1", "text")).unwrap();
        // nearest anchor to 7.3 is 8
        assert_eq!(signal.distribution[4], 1.0);
        assert!((signal.scalar_score - 8.0).abs() < 1e-12);
        assert_eq!(signal.rationale, "plain text verdict");
    }

    #[test]
    fn evolve_zero_rounds_returns_initial() {
        let engine = oracle_engine(&[("p1", 5.0)], NoiseParams::default());
        let outcome = evolve_prompt("1. Initial.", 0, &engine, &engine, &[]).unwrap();
        assert_eq!(outcome.final_criteria, "1. Initial.");
        assert!(outcome.lineage.is_empty());
    }

    #[test]
    fn evolve_rejecting_judger_keeps_initial() {
        let evolver = SignalEngine::new(
            Box::new(ReplayBackend::new().with_default("1. Candidate criteria.")),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let judger = SignalEngine::new(
            Box::new(ReplayBackend::new().with_default("A")),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let outcome = evolve_prompt("1. Initial.", 3, &evolver, &judger, &[]).unwrap();
        assert_eq!(outcome.final_criteria, "1. Initial.");
        assert_eq!(outcome.lineage.len(), 3);
        assert!(outcome.lineage.iter().all(|r| !r.accepted));
    }

    #[test]
    fn evolve_accepting_judger_takes_last_candidate() {
        let evolver = SignalEngine::new(
            Box::new(
                ReplayBackend::new()
                    .with_response("freeform:evolve:1", "1. Round one.")
                    .with_response("freeform:evolve:2", "1. Round two.")
                    .with_response("freeform:evolve:3", "1. Round three."),
            ),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let judger = SignalEngine::new(
            Box::new(ReplayBackend::new().with_default("B")),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        );
        let outcome = evolve_prompt("1. Initial.", 3, &evolver, &judger, &[]).unwrap();
        assert_eq!(outcome.final_criteria, "1. Round three.");
        assert!(outcome.lineage.iter().all(|r| r.accepted));
    }
}
