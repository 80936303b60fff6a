//! Parallel text pipeline: collect node and edge rationales into evidence
//! bundles, consolidate them through a text backend, and parse the structured
//! seven-section review report.
//!
//! The engine's ranking and decision are authoritative: whatever the backend
//! writes in its Ranking/Decision lines is overwritten after parsing, and any
//! disagreement is surfaced on the outcome.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{Decision, RankingResult};
use crate::corpus::{Corpus, PaperId};
use crate::graph::MatchState;
use crate::signals::{BackendTask, SignalEngine, SignalError, SignalStore};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("UnknownPaper: {0:?} is not a ranked submission")]
    UnknownPaper(PaperId),
    #[error("MalformedReport: missing section {0:?}")]
    MalformedReport(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOutcome {
    Win,
    Loss,
}

/// One compared neighbor of the bundled paper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelatedPair {
    /// Citation handle in the prompt's format, e.g. `(#0, 2024)`.
    pub handle: String,
    pub other_id: PaperId,
    pub other_year: i32,
    pub pair_comparison: String,
    pub outcome: PairOutcome,
}

/// All evidence collected for one submission across the committed layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub paper_id: PaperId,
    pub single_paper_review: String,
    pub related_pairs: Vec<RelatedPair>,
    /// 1-based rank among the submissions.
    pub ranking: usize,
    pub total: usize,
    pub decision: Decision,
}

impl EvidenceBundle {
    /// The structured blob filling the consolidation prompt's json slot.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "paper_id": self.paper_id,
            "single_paper_review": self.single_paper_review,
            "related_pairs": self.related_pairs,
            "ranking": format!("{}/{}", self.ranking, self.total),
            "decision": decision_word(self.decision),
        })
        .to_string()
    }
}

/// Collect the evidence bundle for one ranked submission: its node rationale
/// plus one entry per committed edge incident to it, in layer order.
pub fn build_bundle(
    paper_id: &str,
    corpus: &Corpus,
    state: &MatchState,
    store: &SignalStore,
    ranking: &RankingResult,
) -> Result<EvidenceBundle, ReportError> {
    let idx = corpus
        .index_of(paper_id)
        .ok_or_else(|| ReportError::UnknownPaper(paper_id.to_string()))?;
    let rank = ranking
        .rank_of(paper_id)
        .ok_or_else(|| ReportError::UnknownPaper(paper_id.to_string()))?;
    let decision = ranking.decisions[paper_id];
    let single_paper_review = store
        .node(paper_id)
        .map(|n| n.rationale.clone())
        .unwrap_or_default();
    let mut related_pairs = Vec::new();
    for layer in state.layers() {
        for (edge, _) in &layer.edges {
            let (u, v) = edge.endpoints();
            let other = if u == idx {
                v
            } else if v == idx {
                u
            } else {
                continue;
            };
            let other_paper = corpus.paper(other);
            let k = related_pairs.len();
            let (comparison, outcome) = match store.verdict(paper_id, &other_paper.id) {
                Some(verdict) => (
                    verdict.rationale.clone(),
                    if verdict.winner_id == paper_id {
                        PairOutcome::Win
                    } else {
                        PairOutcome::Loss
                    },
                ),
                // edge committed but never compared (should not happen in a
                // completed run); keep the bundle usable
                None => (String::new(), PairOutcome::Loss),
            };
            related_pairs.push(RelatedPair {
                handle: format!("(#{k}, {})", other_paper.year),
                other_id: other_paper.id.clone(),
                other_year: other_paper.year,
                pair_comparison: comparison,
                outcome,
            });
        }
    }
    Ok(EvidenceBundle {
        paper_id: paper_id.to_string(),
        single_paper_review,
        related_pairs,
        ranking: rank,
        total: ranking.order.len(),
        decision,
    })
}

/// The seven fixed sections of a consolidated review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub ranking_line: String,
    pub decision_line: String,
    pub summary: String,
    pub advantages: String,
    pub disadvantages: String,
    pub questions: String,
    pub suggestions: String,
}

const SECTION_NAMES: [&str; 7] = [
    "Ranking",
    "Decision",
    "Summary",
    "Advantages",
    "Disadvantages",
    "Questions",
    "Suggestions",
];

impl ReviewReport {
    /// Parse a backend response. All seven headers must be present, in order;
    /// spacing inside the header markers is tolerated.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut sections: Vec<(usize, String)> = Vec::new(); // (section index, content)
        let mut current: Option<usize> = None;
        let mut contents: [String; 7] = Default::default();
        for line in text.lines() {
            if let Some((section, rest)) = match_header(line) {
                sections.push((section, String::new()));
                current = Some(section);
                if !rest.trim().is_empty() {
                    contents[section].push_str(rest.trim_start());
                    contents[section].push('\n');
                }
                continue;
            }
            if let Some(section) = current {
                contents[section].push_str(line);
                contents[section].push('\n');
            }
        }
        let seen: Vec<usize> = sections.iter().map(|(s, _)| *s).collect();
        for (want, name) in SECTION_NAMES.iter().enumerate() {
            if !seen.contains(&want) {
                return Err(ReportError::MalformedReport((*name).to_string()));
            }
        }
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        if seen != sorted {
            return Err(ReportError::MalformedReport(
                "sections out of order".to_string(),
            ));
        }
        let trim = |s: &String| s.trim_end().to_string();
        Ok(Self {
            ranking_line: trim(&contents[0]),
            decision_line: trim(&contents[1]),
            summary: trim(&contents[2]),
            advantages: trim(&contents[3]),
            disadvantages: trim(&contents[4]),
            questions: trim(&contents[5]),
            suggestions: trim(&contents[6]),
        })
    }

    /// Render in the exact seven-header output format.
    pub fn render(&self) -> String {
        format!(
            "**Ranking:** {}\n**Decision:** {}\n**Summary**:\n{}\n**Advantages**:\n{}\n**Disadvantages**:\n{}\n**Questions**:\n{}\n**Suggestions**:\n{}\n",
            self.ranking_line,
            self.decision_line,
            self.summary,
            self.advantages,
            self.disadvantages,
            self.questions,
            self.suggestions
        )
    }

    /// Rank parsed from the ranking line, tolerating parentheses: `225/500`.
    pub fn parsed_rank(&self) -> Option<(usize, usize)> {
        let cleaned: String = self
            .ranking_line
            .chars()
            .filter(|c| c.is_ascii_digit() || *c == '/')
            .collect();
        let (rank, total) = cleaned.split_once('/')?;
        Some((rank.parse().ok()?, total.parse().ok()?))
    }
}

/// Recognize `**Name:**`, `**Name**:`, or `**Name**` header forms; returns
/// the section index and any content trailing the header on the same line.
fn match_header(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_start();
    let after = t.strip_prefix("**")?;
    for (i, name) in SECTION_NAMES.iter().enumerate() {
        if let Some(rest) = after.strip_prefix(name) {
            let rest = rest.trim_start();
            // colon inside the markers: `Name:**`
            if let Some(r) = rest.strip_prefix(":**") {
                return Some((i, r));
            }
            // colon outside: `Name**:` (or bare `Name**`)
            if let Some(r) = rest.strip_prefix("**") {
                let r = r.trim_start();
                return Some((i, r.strip_prefix(':').unwrap_or(r)));
            }
        }
    }
    None
}

/// Result of one consolidation call.
#[derive(Debug, Clone)]
pub struct ConsolidateOutcome {
    pub report: ReviewReport,
    /// The backend never produced a parseable report; the mechanical
    /// fallback was used.
    pub used_fallback: bool,
    /// The backend's decision or rank disagreed with the engine and was
    /// overwritten.
    pub overridden: bool,
}

/// Consolidate one bundle through the text backend. On a malformed response
/// the call is retried once with a format reminder; a second failure falls
/// back to a mechanical report. The returned report always carries the
/// engine's ranking and decision.
pub fn consolidate(
    bundle: &EvidenceBundle,
    engine: &SignalEngine,
) -> Result<ConsolidateOutcome, ReportError> {
    let prompt = engine.prompts().render_consolidation(&bundle.to_json());
    let task = || BackendTask::Consolidate {
        paper_id: bundle.paper_id.clone(),
    };
    let first = engine.complete(task(), prompt.clone())?;
    let (mut report, used_fallback) = match ReviewReport::parse(&first) {
        Ok(report) => (report, false),
        Err(_) => {
            let reminder = format!(
                "{prompt}\n\nYour previous response did not follow the required output format. Respond again using exactly the seven headers **Ranking:**, **Decision:**, **Summary**:, **Advantages**:, **Disadvantages**:, **Questions**:, **Suggestions**:."
            );
            match engine
                .complete(task(), reminder)
                .map_err(ReportError::from)
                .and_then(|text| ReviewReport::parse(&text))
            {
                Ok(report) => (report, false),
                Err(_) => (fallback_report(bundle), true),
            }
        }
    };
    // engine authority over ranking and decision
    let engine_rank = format!("{}/{}", bundle.ranking, bundle.total);
    let engine_decision = decision_word(bundle.decision);
    let backend_decision = report.decision_line.trim().to_ascii_lowercase();
    let overridden = !used_fallback
        && (!backend_decision.starts_with(&engine_decision.to_ascii_lowercase())
            || report.parsed_rank() != Some((bundle.ranking, bundle.total)));
    report.ranking_line = engine_rank;
    report.decision_line = engine_decision.to_string();
    Ok(ConsolidateOutcome {
        report,
        used_fallback,
        overridden,
    })
}

fn decision_word(decision: Decision) -> &'static str {
    match decision {
        Decision::Accept => "Accept",
        Decision::Reject => "Reject",
    }
}

/// Mechanical report assembled from the bundle when the backend cannot
/// produce a well-formed one.
pub fn fallback_report(bundle: &EvidenceBundle) -> ReviewReport {
    let mut advantages = String::new();
    let mut disadvantages = String::new();
    let mut adv_n = 0;
    let mut dis_n = 0;
    for pair in &bundle.related_pairs {
        let excerpt = excerpt(&pair.pair_comparison);
        match pair.outcome {
            PairOutcome::Win => {
                adv_n += 1;
                advantages.push_str(&format!(
                    "{adv_n}. Judged stronger than {} {}: {excerpt}\n",
                    pair.other_id, pair.handle
                ));
            }
            PairOutcome::Loss => {
                dis_n += 1;
                disadvantages.push_str(&format!(
                    "{dis_n}. Judged weaker than {} {}: {excerpt}\n",
                    pair.other_id, pair.handle
                ));
            }
        }
    }
    if advantages.is_empty() {
        advantages.push_str("1. No favorable comparisons were collected.\n");
    }
    if disadvantages.is_empty() {
        disadvantages.push_str("1. No unfavorable comparisons were collected.\n");
    }
    let summary = if bundle.single_paper_review.is_empty() {
        "No single-paper review was collected for this submission.".to_string()
    } else {
        bundle.single_paper_review.clone()
    };
    ReviewReport {
        ranking_line: format!("{}/{}", bundle.ranking, bundle.total),
        decision_line: decision_word(bundle.decision).to_string(),
        summary,
        advantages: advantages.trim_end().to_string(),
        disadvantages: disadvantages.trim_end().to_string(),
        questions: "1. None.".to_string(),
        suggestions: "1. None.".to_string(),
    }
}

fn excerpt(text: &str) -> String {
    const LIMIT: usize = 400;
    if text.is_empty() {
        return "(no rationale recorded)".to_string();
    }
    match text.char_indices().nth(LIMIT) {
        Some((byte, _)) => format!("{}...", &text[..byte]),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{AnchorScale, PromptSet, ReplayBackend, SignalEngine};

    fn sample_report_text() -> String {
        "**Ranking:** 225/500\n**Decision:** Reject\n**Summary**:\nA compact overview.\n**Advantages**:\n1. Clear problem statement.\n**Disadvantages**:\n1. Thin evaluation.\n**Questions**:\n1. How does it scale?\n**Suggestions**:\n1. Add an ablation.\n".to_string()
    }

    #[test]
    fn parse_happy_path() {
        let report = ReviewReport::parse(&sample_report_text()).unwrap();
        assert_eq!(report.ranking_line, "225/500");
        assert_eq!(report.decision_line, "Reject");
        assert_eq!(report.parsed_rank(), Some((225, 500)));
        assert_eq!(report.summary, "A compact overview.");
        assert_eq!(report.suggestions, "1. Add an ablation.");
    }

    #[test]
    fn parse_tolerates_spacing_variants() {
        let text = "  **Ranking**: (12/50)\n**Decision:**   Accept\n**Summary** :\nBody.\n**Advantages**:\nA.\n**Disadvantages**:\nD.\n**Questions**:\nQ.\n**Suggestions**:\nS.\n";
        // `**Summary** :` has a space before the colon: the colon-outside arm
        // treats the colon as content; section presence is what matters
        let report = ReviewReport::parse(text).unwrap();
        assert_eq!(report.parsed_rank(), Some((12, 50)));
        assert_eq!(report.decision_line, "Accept");
    }

    #[test]
    fn parse_missing_section_fails() {
        let text = sample_report_text().replace("**Suggestions**:\n1. Add an ablation.\n", "");
        match ReviewReport::parse(&text) {
            Err(ReportError::MalformedReport(name)) => assert_eq!(name, "Suggestions"),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let report = ReviewReport::parse(&sample_report_text()).unwrap();
        let rendered = report.render();
        let reparsed = ReviewReport::parse(&rendered).unwrap();
        assert_eq!(report, reparsed);
    }

    fn replay_engine(backend: ReplayBackend) -> SignalEngine {
        SignalEngine::new(
            Box::new(backend),
            None,
            PromptSet::default(),
            AnchorScale::default(),
            0,
        )
    }

    fn bundle() -> EvidenceBundle {
        EvidenceBundle {
            paper_id: "p1".into(),
            single_paper_review: "Node rationale.".into(),
            related_pairs: vec![RelatedPair {
                handle: "(#0, 2024)".into(),
                other_id: "h1".into(),
                other_year: 2024,
                pair_comparison: "p1 argued better.".into(),
                outcome: PairOutcome::Win,
            }],
            ranking: 225,
            total: 500,
            decision: Decision::Reject,
        }
    }

    #[test]
    fn consolidate_happy_path_keeps_backend_text() {
        let engine = replay_engine(
            ReplayBackend::new().with_response("consolidate:p1", sample_report_text()),
        );
        let outcome = consolidate(&bundle(), &engine).unwrap();
        assert!(!outcome.used_fallback);
        assert!(!outcome.overridden, "backend agreed with engine values");
        assert_eq!(outcome.report.summary, "A compact overview.");
        assert_eq!(outcome.report.ranking_line, "225/500");
    }

    #[test]
    fn consolidate_overrides_disagreeing_backend() {
        let text = sample_report_text().replace("Reject", "Accept");
        let engine = replay_engine(ReplayBackend::new().with_response("consolidate:p1", text));
        let outcome = consolidate(&bundle(), &engine).unwrap();
        assert!(outcome.overridden);
        assert_eq!(outcome.report.decision_line, "Reject");
    }

    #[test]
    fn consolidate_falls_back_on_malformed() {
        let engine = replay_engine(
            ReplayBackend::new().with_response("consolidate:p1", "not a report at all"),
        );
        let outcome = consolidate(&bundle(), &engine).unwrap();
        assert!(outcome.used_fallback);
        assert_eq!(outcome.report.decision_line, "Reject");
        assert_eq!(outcome.report.ranking_line, "225/500");
        assert!(outcome.report.advantages.contains("h1"));
        // fallback renders parseable
        assert!(ReviewReport::parse(&outcome.report.render()).is_ok());
    }
}
