//! Prompt templates with named placeholders.
//!
//! Templates can be overridden from a directory of text files; rendering
//! replaces every `{name}` occurrence. Scoring responses must begin with a
//! scored number and comparison responses with a choice letter, which is what
//! the response parsers rely on.

use std::path::Path;

use sha2::{Digest, Sha256};

/// Default reviewer criteria used when none are supplied or evolved.
pub const DEFAULT_CRITERIA: &str = "\
1. Originality of the research problem and approach.
2. Technical soundness of the method and its validation.
3. Clarity and organization of the presentation.
4. Significance of the contribution to the field.";

const SCORE_TEMPLATE: &str = "\
You are an expert reviewer.
Evaluating a paper by its quality.
Your analysis must follow the following criteria:
{criteria}
Your answer should be about 2000 words.
Do not use bold or any other symbols.
Your answer must always begin with a scored number, and there must be no other text before it.
Do not mention any issues regarding the truncation of submitted content; truncation does not constitute part of the analysis.

Evaluate the following paper and provide a score using the following scale:
0: strong reject
1: reject, not good enough
2: marginally below the acceptance threshold
3: marginally above the acceptance threshold
4: accept, good paper
5: strong accept, should be highlighted at the conference
Here is the paper:
```
{paper_text}
```
Please provide your score first as a single number (0-5), then explain your reasoning.
Score:";

const SCORE_TRAINING_TEMPLATE: &str = "\
You are an expert reviewer.
Evaluating a paper by its quality.
Your analysis must follow the following criteria:
{criteria}
Your answer should be about 2000 words.
Do not use bold or any other symbols.
Your answer must always begin with a scored number, and there must be no other text before it.
Do not mention any issues regarding the truncation of submitted content; truncation does not constitute part of the analysis.
The correct score for this paper is {ground_truth}.
You must give this score and provide a convincing explanation for why this score is appropriate.

Evaluate the following paper and provide a score using the following scale:
0: strong reject
1: reject, not good enough
2: marginally below the acceptance threshold
3: marginally above the acceptance threshold
4: accept, good paper
5: strong accept, should be highlighted at the conference
Here is the paper:
```
{paper_text}
```
Please provide your score first as a single number (0-5), then explain your reasoning.
Score:";

const COMPARE_TEMPLATE: &str = "\
You are an expert reviewer.
Analyze the following two papers separately, then indicate which one is of higher quality.
Your analysis must follow the following criteria:
{criteria}
Your answer should be about 1000 words.
Do not use bold or any other symbols.
Your answer must always begin with a choice (A or B), and there must be no other text before it.
Do not mention any issues regarding the truncation of submitted content; truncation does not constitute part of the analysis.

Compare the following two papers and decide which one is better in quality.
Paper A:
```
{paper_text_a}
```
Paper B:
```
{paper_text_b}
```
Please provide your choice first as a single letter (A or B), then explain your reasoning.
Choice: ";

const COMPARE_TRAINING_TEMPLATE: &str = "\
You are an expert reviewer.
Analyze the following two papers separately, then indicate which one is of higher quality.
Your analysis must follow the following criteria:
{criteria}
Your answer should be about 1000 words.
Do not use bold or any other symbols.
Your answer must always begin with a choice (A or B), and there must be no other text before it.
Do not mention any issues regarding the truncation of submitted content; truncation does not constitute part of the analysis.
The correct choice is {ground_truth}.
You must output this choice and provide a convincing explanation for why this choice is appropriate.

Compare the following two papers and decide which one is better in quality.
Paper A:
```
{paper_text_a}
```
Paper B:
```
{paper_text_b}
```
Please provide your choice first as a single letter (A or B), then explain your reasoning.
Choice: ";

const CONSOLIDATION_TEMPLATE: &str = "\
You are an expert academic reviewer and research analyst.
Your task is to produce an enhanced review of a single paper by integrating valuable comparative insights.
Instructions:
1. Use the provided `single_paper_review` as the primary foundation and preserve its core judgment unless the comparative evidence clearly justifies adjustment.
2. For each entry in `related_pairs`, briefly extract only the most relevant information from `pair_comparison`, especially comparative strengths, weaknesses, missing validations, or clearer methodological standards that are directly useful for evaluating this paper.
3. Integrate these insights naturally into the `single_paper_review`, citing the relevant literature in the merged text. Citation format: e.g. `(#0, 2025)`. Use comparisons selectively and only when they strengthen or clarify the review.
4. You must output content related to `ranking` and `decision` at first, e.g. `**Ranking:** (0/500)` and `**Decision:** Accept`. Make sure the ranking, decision, and all arguments are fully consistent with each other after revision.
5. Structure the review clearly into layered sections: first give an overall assessment, then list the most important strengths, then the most important weaknesses, and finally concrete questions/suggestions. Avoid repetition across sections.
6. The questions and suggestions proposed must all be highly practical, specific, feasible, and directly actionable for the authors to address.
7. Keep the tone professional, evidence-based, and concise. Avoid exaggerated claims or unsupported criticism.
8. Only output the merged text. Do not include any other content.
Here is all the content related to the paper:
```
{json_str}
```
The output format you need to follow:
```
**Ranking:**
**Decision:**
**Summary**:
**Advantages**:
**Disadvantages**:
**Questions**:
**Suggestions**:
```";

const EVOLVER_TEMPLATE: &str = "\
You are an expert prompt optimizer.
Your task is to optimize the {criteria} so that the language model can generate better responses.
Do not provide any information related to the output format or output requirements; analyze only the content.
The <Criteria> you provide must be structured (Use 1. 2. 3. ...), expressed clearly and accurately.
You must only return the optimized <Criteria>.
Prompt:
```
{prompt}
```
Current <Criteria> (Empty if none):
```
{criteria}
```";

const JUDGER_TEMPLATE: &str = "\
You are an expert answer evaluator.
Your task is to compare which of the two answers is of higher quality.
You must only return the character (A/B) representing the quality.
Answer A:
```
{answer_A}
```
Answer B:
```
{answer_B}
```
Better: ";

/// The full template set for scoring, comparison, consolidation, and prompt
/// evolution.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub criteria: String,
    pub score_template: String,
    pub score_training_template: String,
    pub compare_template: String,
    pub compare_training_template: String,
    pub consolidation_template: String,
    pub evolver_template: String,
    pub judger_template: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            criteria: DEFAULT_CRITERIA.to_string(),
            score_template: SCORE_TEMPLATE.to_string(),
            score_training_template: SCORE_TRAINING_TEMPLATE.to_string(),
            compare_template: COMPARE_TEMPLATE.to_string(),
            compare_training_template: COMPARE_TRAINING_TEMPLATE.to_string(),
            consolidation_template: CONSOLIDATION_TEMPLATE.to_string(),
            evolver_template: EVOLVER_TEMPLATE.to_string(),
            judger_template: JUDGER_TEMPLATE.to_string(),
        }
    }
}

impl PromptSet {
    /// Override templates from files in `dir`. Missing files keep defaults.
    /// Recognized names: `criteria.txt`, `score.txt`, `score_training.txt`,
    /// `compare.txt`, `compare_training.txt`, `consolidation.txt`,
    /// `evolver.txt`, `judger.txt`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        let load = |name: &str, slot: &mut String| -> std::io::Result<()> {
            let path = dir.join(name);
            if path.is_file() {
                *slot = std::fs::read_to_string(path)?;
            }
            Ok(())
        };
        load("criteria.txt", &mut set.criteria)?;
        load("score.txt", &mut set.score_template)?;
        load("score_training.txt", &mut set.score_training_template)?;
        load("compare.txt", &mut set.compare_template)?;
        load("compare_training.txt", &mut set.compare_training_template)?;
        load("consolidation.txt", &mut set.consolidation_template)?;
        load("evolver.txt", &mut set.evolver_template)?;
        load("judger.txt", &mut set.judger_template)?;
        Ok(set)
    }

    pub fn render_score(&self, paper_text: &str) -> String {
        self.render_score_with(&self.criteria, paper_text)
    }

    pub fn render_score_with(&self, criteria: &str, paper_text: &str) -> String {
        render(
            &self.score_template,
            &[("criteria", criteria), ("paper_text", paper_text)],
        )
    }

    pub fn render_score_training(&self, paper_text: &str, ground_truth: f64) -> String {
        render(
            &self.score_training_template,
            &[
                ("criteria", &self.criteria),
                ("paper_text", paper_text),
                ("ground_truth", &format_score(ground_truth)),
            ],
        )
    }

    pub fn render_compare(&self, paper_text_a: &str, paper_text_b: &str) -> String {
        render(
            &self.compare_template,
            &[
                ("criteria", &self.criteria),
                ("paper_text_a", paper_text_a),
                ("paper_text_b", paper_text_b),
            ],
        )
    }

    pub fn render_compare_training(
        &self,
        paper_text_a: &str,
        paper_text_b: &str,
        ground_truth: &str,
    ) -> String {
        render(
            &self.compare_training_template,
            &[
                ("criteria", &self.criteria),
                ("paper_text_a", paper_text_a),
                ("paper_text_b", paper_text_b),
                ("ground_truth", ground_truth),
            ],
        )
    }

    pub fn render_consolidation(&self, json_str: &str) -> String {
        render(&self.consolidation_template, &[("json_str", json_str)])
    }

    pub fn render_evolver(&self, prompt: &str, criteria: &str) -> String {
        render(
            &self.evolver_template,
            &[("prompt", prompt), ("criteria", criteria)],
        )
    }

    pub fn render_judger(&self, answer_a: &str, answer_b: &str) -> String {
        render(
            &self.judger_template,
            &[("answer_A", answer_a), ("answer_B", answer_b)],
        )
    }

    /// Digest over every template, for cache keys.
    pub fn template_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for part in [
            &self.criteria,
            &self.score_template,
            &self.score_training_template,
            &self.compare_template,
            &self.compare_training_template,
            &self.consolidation_template,
            &self.evolver_template,
            &self.judger_template,
        ] {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        hex(&hasher.finalize())
    }
}

fn format_score(score: f64) -> String {
    if score.fract() == 0.0 {
        format!("{score:.0}")
    } else {
        format!("{score}")
    }
}

fn render(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in substitutions {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
