//! Shared fixtures and independent oracles for the integration suites.

use std::collections::HashMap;

use graphreview_core::corpus::{Corpus, Embedding, Paper, Role};
use graphreview_core::signals::{
    AnchorScale, BackendConfig, BackendKind, NoiseParams, PromptSet, SignalEngine,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labeled synthetic corpus with random unit embeddings and ground-truth
/// scores drawn uniform in [1, 10].
pub fn synth_corpus(n_subs: usize, n_hist: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_subs + n_hist;
    let mut papers = Vec::with_capacity(total);
    let mut embeddings = Vec::with_capacity(total);
    let mut labels = HashMap::new();
    for i in 0..total {
        let role = if i < n_subs {
            Role::Submission
        } else {
            Role::Historical
        };
        let id = format!("p{i:03}");
        papers.push(Paper {
            id: id.clone(),
            role,
            venue: "venue".into(),
            year: if role == Role::Submission { 2025 } else { 2024 },
            text: format!("synthetic body of paper {i}"),
        });
        let vector: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        embeddings.push(Embedding {
            paper_id: id.clone(),
            vector,
        });
        labels.insert(id, 1.0 + 9.0 * rng.random::<f64>());
    }
    Corpus::from_parts(papers, embeddings, labels).unwrap()
}

pub fn oracle_engine(corpus: &Corpus, noise: NoiseParams, seed: u64) -> SignalEngine {
    let config = BackendConfig {
        kind: BackendKind::Oracle,
        noise,
        ..BackendConfig::default()
    };
    SignalEngine::from_config(
        &config,
        corpus,
        PromptSet::default(),
        AnchorScale::default(),
        seed,
    )
    .unwrap()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n.is_multiple_of(2) {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    } else {
        values[n / 2]
    }
}

/// Spearman reference: pairwise-counting average ranks fed through the
/// rank-difference formula.
pub fn spearman_oracle(pred: &[f64], truth: &[f64]) -> f64 {
    let rank = |v: &[f64], i: usize| {
        let less = v.iter().filter(|&&x| x < v[i]).count() as f64;
        let eq = v.iter().filter(|&&x| x == v[i]).count() as f64;
        less + (eq + 1.0) / 2.0
    };
    let n = pred.len() as f64;
    let sum_sq: f64 = (0..pred.len())
        .map(|i| {
            let d = rank(pred, i) - rank(truth, i);
            d * d
        })
        .sum();
    1.0 - 6.0 * sum_sq / (n * (n * n - 1.0))
}

/// Kendall tau-b reference: explicit classification of every pair, with the
/// tie terms counting pairs tied in exactly one ranking.
pub fn kendall_oracle(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let n = pred.len();
    let (mut nc, mut nd, mut nx_only, mut ny_only) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = pred[i] - pred[j];
            let dy = truth[i] - truth[j];
            if dx == 0.0 && dy == 0.0 {
                // tied in both: excluded everywhere
            } else if dx == 0.0 {
                nx_only += 1.0;
            } else if dy == 0.0 {
                ny_only += 1.0;
            } else if dx * dy > 0.0 {
                nc += 1.0;
            } else {
                nd += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - nx_only) * (n0 - ny_only)).sqrt();
    if denom == 0.0 {
        None
    } else {
        Some((nc - nd) / denom)
    }
}
