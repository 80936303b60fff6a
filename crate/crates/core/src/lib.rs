//! Ranking-aggregation engine for paper review corpora.
//!
//! Builds a semantic paper graph by iterative 2-factor matching over
//! embeddings, collects node-level quality priors and edge-level pairwise
//! preferences from pluggable backends, fuses them with Personalized PageRank
//! into a global ranking with accept/reject decisions and consolidated review
//! reports, and evaluates results with decision and ranking metrics. Also
//! constructs reward-induced training targets and losses for backend
//! fine-tuning data.

pub mod aggregate;
pub mod corpus;
pub mod driver;
pub mod graph;
pub mod metrics;
pub mod report;
pub mod riml;
pub mod signals;
