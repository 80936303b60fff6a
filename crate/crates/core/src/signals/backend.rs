//! Scorer/comparator backends: label-driven oracle, generic remote endpoint,
//! and canned replay. All backends answer the same request shape with a
//! leading-verdict-token text response; the oracle additionally supplies
//! anchor-level probabilities.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, PaperId};
use crate::signals::{AnchorScale, SignalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Oracle,
    Remote,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(Self::Oracle),
            "remote" => Ok(Self::Remote),
            "replay" => Ok(Self::Replay),
            other => Err(SignalError::InvalidParam(format!(
                "unknown backend kind {other:?}"
            ))),
        }
    }
}

/// Perturbation parameters for the oracle backend.
#[derive(Debug, Clone)]
pub struct NoiseParams {
    /// Probability of inverting a comparison verdict.
    pub flip_probability: f64,
    /// Standard deviation of Gaussian noise added to scalar scores before
    /// anchor-softening.
    pub score_sigma: f64,
    /// Smoothness of the anchor-softening distribution.
    pub soften_sigma: f64,
    /// Temperature of the anchor-softening distribution.
    pub soften_tau: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            flip_probability: 0.0,
            score_sigma: 0.0,
            soften_sigma: 1.0,
            soften_tau: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Everything needed to construct a backend.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key: Option<String>,
    pub noise: NoiseParams,
    pub cache_dir: Option<PathBuf>,
    pub replay_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            endpoint: None,
            model: "default".into(),
            api_key: None,
            noise: NoiseParams::default(),
            cache_dir: None,
            replay_dir: None,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
        }
    }
}

/// What a request is asking for, carried alongside the rendered prompt so the
/// oracle and replay backends can answer without parsing prompt text.
#[derive(Debug, Clone)]
pub enum BackendTask {
    Score {
        paper_id: PaperId,
    },
    /// Papers as presented in the prompt: `first_id` is paper A.
    Compare {
        first_id: PaperId,
        second_id: PaperId,
    },
    Consolidate {
        paper_id: PaperId,
    },
    FreeForm {
        label: String,
    },
}

impl BackendTask {
    /// Stable key used by replay lookups.
    pub fn replay_key(&self) -> String {
        match self {
            Self::Score { paper_id } => format!("score:{paper_id}"),
            Self::Compare {
                first_id,
                second_id,
            } => format!("compare:{first_id}:{second_id}"),
            Self::Consolidate { paper_id } => format!("consolidate:{paper_id}"),
            Self::FreeForm { label } => format!("freeform:{label}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub task: BackendTask,
    pub prompt: String,
}

#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    /// Token-level probabilities over the anchor classes, when the backend
    /// exposes them.
    pub anchor_probs: Option<Vec<f64>>,
}

pub trait Backend: Send + Sync {
    /// Stable identifier entering every cache key.
    fn id(&self) -> String;
    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError>;
}

/// Deterministic RNG derived from the run seed and a content tag, so that
/// noise is reproducible and independent of call order.
fn derive_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut eight = [0u8; 8];
    eight.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(eight))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Label-driven backend for desk-scale verification. Scores echo the (noised)
/// ground-truth label softened over anchors; comparisons follow the label
/// order with an optional flip and a lexicographic tie-break.
pub struct OracleBackend {
    labels: HashMap<PaperId, f64>,
    scale: AnchorScale,
    noise: NoiseParams,
}

impl OracleBackend {
    pub fn new(
        corpus: &Corpus,
        scale: AnchorScale,
        noise: NoiseParams,
    ) -> Result<Self, SignalError> {
        let mut labels = HashMap::new();
        for i in 0..corpus.len() {
            if let Some(score) = corpus.label(i) {
                labels.insert(corpus.paper(i).id.clone(), score);
            }
        }
        if labels.is_empty() {
            return Err(SignalError::MissingLabel(
                "oracle backend requires a labeled corpus".into(),
            ));
        }
        Ok(Self {
            labels,
            scale,
            noise,
        })
    }

    fn label(&self, id: &str) -> Result<f64, SignalError> {
        self.labels
            .get(id)
            .copied()
            .ok_or_else(|| SignalError::MissingLabel(id.to_string()))
    }

    /// Distribution over anchors for a scalar: a point mass when the scalar
    /// sits exactly on an anchor, otherwise the reward-induced softening.
    fn soften(&self, scalar: f64) -> Result<Vec<f64>, SignalError> {
        if let Some(pos) = self.scale.anchors().iter().position(|&a| a == scalar) {
            let mut dist = vec![0.0; self.scale.len()];
            dist[pos] = 1.0;
            return Ok(dist);
        }
        let target = crate::riml::node_target(
            scalar,
            &self.scale,
            self.noise.soften_sigma,
            self.noise.soften_tau,
        )
        .map_err(|e| SignalError::InvalidParam(e.to_string()))?;
        Ok(target.y)
    }
}

impl Backend for OracleBackend {
    fn id(&self) -> String {
        format!(
            "oracle:flip={}:sigma={}:ssig={}:stau={}:seed={}",
            self.noise.flip_probability,
            self.noise.score_sigma,
            self.noise.soften_sigma,
            self.noise.soften_tau,
            self.noise.seed
        )
    }

    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError> {
        match &request.task {
            BackendTask::Score { paper_id } => {
                let mut scalar = self.label(paper_id)?;
                if self.noise.score_sigma > 0.0 {
                    let mut rng = derive_rng(self.noise.seed, &["score", paper_id]);
                    scalar += self.noise.score_sigma * gaussian(&mut rng);
                }
                let dist = self.soften(scalar)?;
                let text = format!("{scalar}\nDeterministic oracle estimate for paper {paper_id}.");
                Ok(BackendResponse {
                    text,
                    anchor_probs: Some(dist),
                })
            }
            BackendTask::Compare {
                first_id,
                second_id,
            } => {
                let s_first = self.label(first_id)?;
                let s_second = self.label(second_id)?;
                // strict verdict: higher label wins, equal labels go to the
                // lexicographically smaller id
                let mut first_wins = match s_first.partial_cmp(&s_second).unwrap() {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => first_id < second_id,
                };
                if self.noise.flip_probability > 0.0 {
                    // keyed by the unordered pair so both call orders agree
                    let (lo, hi) = if first_id < second_id {
                        (first_id, second_id)
                    } else {
                        (second_id, first_id)
                    };
                    let mut rng = derive_rng(self.noise.seed, &["flip", lo, hi]);
                    if rng.random::<f64>() < self.noise.flip_probability {
                        first_wins = !first_wins;
                    }
                }
                let letter = if first_wins { "A" } else { "B" };
                let text = format!(
                    "{letter}\nDeterministic oracle comparison of {first_id} and {second_id}."
                );
                Ok(BackendResponse {
                    text,
                    anchor_probs: None,
                })
            }
            BackendTask::Consolidate { paper_id } => Ok(BackendResponse {
                text: consolidate_from_prompt(paper_id, &request.prompt),
                anchor_probs: None,
            }),
            BackendTask::FreeForm { label } => {
                // judgments prefer the incumbent; evolution proposes nothing new
                let text = if label.starts_with("judge") {
                    "A"
                } else {
                    "OK"
                };
                Ok(BackendResponse {
                    text: text.into(),
                    anchor_probs: None,
                })
            }
        }
    }
}

/// Assemble a seven-section report from the evidence blob embedded in the
/// consolidation prompt. Falls back to a minimal skeleton when no blob is
/// found.
fn consolidate_from_prompt(paper_id: &str, prompt: &str) -> String {
    let evidence = extract_fenced_json(prompt);
    let mut ranking = "0/0".to_string();
    let mut decision = "Reject".to_string();
    let mut summary = format!("Mechanical consolidation for paper {paper_id}.");
    let mut advantages = String::new();
    let mut disadvantages = String::new();
    if let Some(value) = evidence {
        if let Some(r) = value.get("ranking").and_then(|v| v.as_str()) {
            ranking = r.to_string();
        }
        if let Some(d) = value.get("decision").and_then(|v| v.as_str()) {
            decision = d.to_string();
        }
        if let Some(review) = value.get("single_paper_review").and_then(|v| v.as_str()) {
            if !review.is_empty() {
                summary = review.to_string();
            }
        }
        if let Some(pairs) = value.get("related_pairs").and_then(|v| v.as_array()) {
            let (mut wins, mut losses) = (0usize, 0usize);
            for pair in pairs {
                let handle = pair.get("handle").and_then(|v| v.as_str()).unwrap_or("");
                let other = pair.get("other_id").and_then(|v| v.as_str()).unwrap_or("?");
                let text = pair
                    .get("pair_comparison")
                    .and_then(|v| v.as_str())
                    .unwrap_or("");
                match pair.get("outcome").and_then(|v| v.as_str()) {
                    Some("win") => {
                        wins += 1;
                        advantages
                            .push_str(&format!("{wins}. Stronger than {other} {handle}: {text}\n"));
                    }
                    _ => {
                        losses += 1;
                        disadvantages
                            .push_str(&format!("{losses}. Weaker than {other} {handle}: {text}\n"));
                    }
                }
            }
        }
    }
    if advantages.is_empty() {
        advantages.push_str("1. No favorable comparisons were collected.\n");
    }
    if disadvantages.is_empty() {
        disadvantages.push_str("1. No unfavorable comparisons were collected.\n");
    }
    format!(
        "**Ranking:** {ranking}\n**Decision:** {decision}\n**Summary**:\n{summary}\n**Advantages**:\n{}**Disadvantages**:\n{}**Questions**:\n1. None.\n**Suggestions**:\n1. None.\n",
        advantages, disadvantages
    )
}

/// First parseable JSON object inside a ``` fence.
fn extract_fenced_json(prompt: &str) -> Option<serde_json::Value> {
    let mut rest = prompt;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let end = after.find("```")?;
        let block = after[..end].trim();
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(block) {
            return Some(value);
        }
        rest = &after[end + 3..];
    }
    None
}

/// Generic chat-completion-style HTTP backend: POST with model, message list,
/// temperature 0; the reply text is parsed as leading verdict token plus
/// rationale.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    timeout: Duration,
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, SignalError> {
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            SignalError::InvalidParam("remote backend requires an endpoint".into())
        })?;
        Ok(Self {
            endpoint,
            model: config.model.clone(),
            api_key: config.api_key.clone(),
            retry: config.retry.clone(),
            timeout: config.timeout,
        })
    }

    fn call_once(&self, prompt: &str) -> Result<BackendResponse, String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut request = ureq::post(&self.endpoint).timeout(self.timeout);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = request.send_json(body).map_err(|e| e.to_string())?;
        let raw = response.into_string().map_err(|e| e.to_string())?;
        Ok(parse_remote_body(&raw))
    }
}

/// Accepts either a chat-completion JSON body or plain text. A top-level
/// `anchor_probs` array is honored when present.
fn parse_remote_body(raw: &str) -> BackendResponse {
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(raw) {
        let anchor_probs = value.get("anchor_probs").and_then(|p| {
            p.as_array().map(|items| {
                items
                    .iter()
                    .filter_map(|x| x.as_f64())
                    .collect::<Vec<f64>>()
            })
        });
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|t| t.as_str())
            .or_else(|| value.get("text").and_then(|t| t.as_str()))
            .map(|s| s.to_string());
        if let Some(text) = text {
            return BackendResponse { text, anchor_probs };
        }
    }
    BackendResponse {
        text: raw.to_string(),
        anchor_probs: None,
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.model)
    }

    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError> {
        let mut last_error = String::new();
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt as u32 - 1));
            }
            match self.call_once(&request.prompt) {
                Ok(response) => return Ok(response),
                Err(e) => last_error = e,
            }
        }
        Err(SignalError::BackendUnavailable {
            details: format!(
                "{} failed after {} attempts: {last_error}",
                self.endpoint, self.retry.attempts
            ),
        })
    }
}

/// Canned responses keyed by task, from an in-memory map and/or a directory of
/// files named by the sanitized task key.
#[derive(Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
    default: Option<String>,
    dir: Option<PathBuf>,
}

impl ReplayBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dir(dir: PathBuf) -> Self {
        Self {
            dir: Some(dir),
            ..Self::default()
        }
    }

    pub fn with_response(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.insert(key.into(), text.into());
        self
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    fn sanitize(key: &str) -> String {
        key.chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    fn respond(&self, request: &BackendRequest) -> Result<BackendResponse, SignalError> {
        let key = request.task.replay_key();
        if let Some(text) = self.responses.get(&key) {
            return Ok(BackendResponse {
                text: text.clone(),
                anchor_probs: None,
            });
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.txt", Self::sanitize(&key)));
            if path.is_file() {
                let text =
                    std::fs::read_to_string(&path).map_err(|e| SignalError::Io(e.to_string()))?;
                return Ok(BackendResponse {
                    text,
                    anchor_probs: None,
                });
            }
        }
        if let Some(text) = &self.default {
            return Ok(BackendResponse {
                text: text.clone(),
                anchor_probs: None,
            });
        }
        Err(SignalError::BackendUnavailable {
            details: format!("no replay entry for {key}"),
        })
    }
}
