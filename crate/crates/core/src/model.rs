//! Core domain types shared by every stage of the pipeline, plus prompt
//! assembly: the per-task `combine` templates and answer-prefix substitution.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("task spec {task}: {reason}")]
    InvalidTaskSpec { task: String, reason: String },
    #[error("choice index {index} out of range for instance {id} ({len} choices)")]
    ChoiceOutOfRange { id: String, index: usize, len: usize },
    #[error("no combine template for question kind {kind:?} and no default")]
    NoTemplate { kind: Option<String> },
    #[error("unknown template slot [{0}]")]
    UnknownSlot(String),
    #[error("placeholder {placeholder:?} not found in context of instance {id}")]
    MissingPlaceholder { id: String, placeholder: String },
    #[error("question {question:?} does not start with prefix {prefix:?}")]
    PrefixMismatch { question: String, prefix: String },
}

/// Identifiers for the built-in tasks. `Custom` covers user-supplied specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Copa,
    Commonsenseqa,
    Mctaco,
    Socialiqa,
    Piqa,
    Winogrande,
    Custom,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::Copa => "copa",
            TaskId::Commonsenseqa => "commonsenseqa",
            TaskId::Mctaco => "mctaco",
            TaskId::Socialiqa => "socialiqa",
            TaskId::Piqa => "piqa",
            TaskId::Winogrande => "winogrande",
            TaskId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copa" => Ok(TaskId::Copa),
            "commonsenseqa" => Ok(TaskId::Commonsenseqa),
            "mctaco" => Ok(TaskId::Mctaco),
            "socialiqa" => Ok(TaskId::Socialiqa),
            "piqa" => Ok(TaskId::Piqa),
            "winogrande" => Ok(TaskId::Winogrande),
            "custom" => Ok(TaskId::Custom),
            other => Err(format!("unknown task id: {other}")),
        }
    }
}

/// One multiple-choice item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Selects a combine template, e.g. `cause`/`effect` for COPA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_kind: Option<String>,
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
}

impl Instance {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.choices.is_empty() {
            return Err(ModelError::InvalidInstance {
                id: self.id.clone(),
                reason: "no answer choices".into(),
            });
        }
        if self.choices.iter().any(|c| c.trim().is_empty()) {
            return Err(ModelError::InvalidInstance {
                id: self.id.clone(),
                reason: "empty answer choice".into(),
            });
        }
        if let Some(g) = self.gold {
            if g >= self.choices.len() {
                return Err(ModelError::InvalidInstance {
                    id: self.id.clone(),
                    reason: format!("gold index {g} out of range ({} choices)", self.choices.len()),
                });
            }
        }
        Ok(())
    }

    /// Text a generator conditions on: the context when present, otherwise
    /// the question. Tasks without either cannot drive generation.
    pub fn conditioning_text(&self) -> Option<&str> {
        self.context
            .as_deref()
            .filter(|c| !c.trim().is_empty())
            .or_else(|| self.question.as_deref().filter(|q| !q.trim().is_empty()))
    }
}

/// A curated (question prefix, answer prefix template) pair. `_` in the
/// answer prefix template is replaced with the body of the generated
/// question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixPair {
    pub question_prefix: String,
    pub answer_prefix_template: String,
}

/// Per-task configuration: combine templates keyed by question kind (or
/// `default`), self-talk prefix pairs, and the blank marker for
/// placeholder-style tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    /// Template text with slots `[context]`, `[question]`, `[choice]`.
    pub combine_templates: BTreeMap<String, String>,
    #[serde(default)]
    pub prefix_pairs: Vec<PrefixPair>,
    /// Blank marker replaced by the choice text (WinoGrande-style tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder_token: Option<String>,
}

impl TaskSpec {
    /// Every template must deliver the choice text, either through a
    /// `[choice]` slot or through the task's placeholder token.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.combine_templates.is_empty() {
            return Err(ModelError::InvalidTaskSpec {
                task: self.task_id.to_string(),
                reason: "no combine templates".into(),
            });
        }
        for (kind, tpl) in &self.combine_templates {
            if !tpl.contains("[choice]") && self.placeholder_token.is_none() {
                return Err(ModelError::InvalidTaskSpec {
                    task: self.task_id.to_string(),
                    reason: format!("template {kind:?} lacks a [choice] slot"),
                });
            }
        }
        Ok(())
    }

    fn template_for(&self, kind: Option<&str>) -> Result<&str, ModelError> {
        if let Some(k) = kind {
            if let Some(tpl) = self.combine_templates.get(k) {
                return Ok(tpl.as_str());
            }
        }
        self.combine_templates
            .get("default")
            .map(|s| s.as_str())
            .ok_or_else(|| ModelError::NoTemplate {
                kind: kind.map(|s| s.to_string()),
            })
    }
}

/// Where a clarification came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationSource {
    Selftalk,
    Conceptnet,
    Ngrams,
    GenerativeKb,
    Static,
}

impl fmt::Display for ClarificationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClarificationSource::Selftalk => "selftalk",
            ClarificationSource::Conceptnet => "conceptnet",
            ClarificationSource::Ngrams => "ngrams",
            ClarificationSource::GenerativeKb => "generative_kb",
            ClarificationSource::Static => "static",
        };
        f.write_str(s)
    }
}

/// One background-knowledge sentence with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clarification {
    pub text: String,
    pub source: ClarificationSource,
    /// The question this clarification answers, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_prefix: Option<String>,
    /// Generated continuation; `text = answer_prefix + raw_generation` for
    /// self-talk clarifications.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_generation: Option<String>,
}

impl Clarification {
    pub fn simple(text: impl Into<String>, source: ClarificationSource) -> Self {
        Clarification {
            text: text.into(),
            source,
            question_text: None,
            question_prefix: None,
            answer_prefix: None,
            raw_generation: None,
        }
    }
}

/// Per-choice bits-per-token score. `best_clarification` indexes into the
/// instance's clarification list and is present exactly when the minimum was
/// achieved by a clarification-augmented text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub choice_index: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_clarification: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    Baseline,
    Clarified,
}

/// The scored instance: one `ChoiceScore` per choice and the argmin decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub choice_scores: Vec<ChoiceScore>,
    pub predicted: usize,
    pub mode: PredictionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
}

/// Index of the minimal score, ties broken by lowest index.
pub fn argmin_choice(scores: &[ChoiceScore]) -> usize {
    let mut best = 0usize;
    for (i, cs) in scores.iter().enumerate().skip(1) {
        if cs.score < scores[best].score {
            best = i;
        }
    }
    best
}

const SENTENCE_TERMINATORS: [char; 3] = ['.', '!', '?'];

pub fn ends_with_terminator(text: &str) -> bool {
    text.trim_end()
        .chars()
        .next_back()
        .map(|c| SENTENCE_TERMINATORS.contains(&c))
        .unwrap_or(false)
}

pub fn sentence_terminators() -> &'static [char] {
    &SENTENCE_TERMINATORS
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Slot(String),
}

fn parse_template(template: &str) -> Result<Vec<Segment>, ModelError> {
    let mut segments = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('[') {
        if let Some(end) = rest[start..].find(']') {
            let name = &rest[start + 1..start + end];
            if !matches!(name, "context" | "question" | "choice") {
                return Err(ModelError::UnknownSlot(name.to_string()));
            }
            if start > 0 {
                segments.push(Segment::Literal(rest[..start].to_string()));
            }
            segments.push(Segment::Slot(name.to_string()));
            rest = &rest[start + end + 1..];
        } else {
            break;
        }
    }
    if !rest.is_empty() {
        segments.push(Segment::Literal(rest.to_string()));
    }
    Ok(segments)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders a parsed template. Joined fragments are separated by single
/// spaces; a context that lacks terminal punctuation gets a period before
/// the template continues; a literal period right after a terminated value
/// is dropped rather than doubled.
fn render(
    segments: &[Segment],
    context: &str,
    question: &str,
    choice: &str,
    insert_after_context: Option<&str>,
) -> String {
    let mut out = String::new();
    let mut pending_insertion = insert_after_context.is_none();
    let push = |out: &mut String, piece: &str| {
        if piece.is_empty() {
            return;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(piece);
    };
    for (i, seg) in segments.iter().enumerate() {
        match seg {
            Segment::Slot(name) => {
                let value = match name.as_str() {
                    "context" => {
                        let mut v = collapse_whitespace(context);
                        let continues = i + 1 < segments.len();
                        if !v.is_empty() && continues && !ends_with_terminator(&v) {
                            v.push('.');
                        }
                        v
                    }
                    "question" => collapse_whitespace(question),
                    "choice" => choice.to_string(),
                    _ => unreachable!(),
                };
                push(&mut out, &value);
                if name == "context" && !pending_insertion {
                    push(&mut out, insert_after_context.unwrap_or(""));
                    pending_insertion = true;
                }
            }
            Segment::Literal(lit) => {
                let mut lit = lit.as_str();
                // Skip a duplicated period at the context boundary and
                // stray punctuation left over from an empty leading slot.
                if lit.starts_with('.') && (out.is_empty() || ends_with_terminator(&out)) {
                    lit = &lit[1..];
                }
                push(&mut out, lit.trim());
            }
        }
    }
    if !pending_insertion {
        // No [context] slot in the template: the insertion leads the text.
        let mut led = insert_after_context.unwrap_or("").to_string();
        push(&mut led, &out);
        return collapse_whitespace(&led);
    }
    collapse_whitespace(&out)
}

/// Assigns a choice into the task's combine template, yielding the text the
/// scorer evaluates.
pub fn combine(spec: &TaskSpec, inst: &Instance, choice_index: usize) -> Result<String, ModelError> {
    combine_with_insertion(spec, inst, choice_index, None)
}

/// Like [`combine`], but splices an extra fragment (a clarification)
/// immediately after the context.
pub fn combine_with_insertion(
    spec: &TaskSpec,
    inst: &Instance,
    choice_index: usize,
    insertion: Option<&str>,
) -> Result<String, ModelError> {
    let choice = inst
        .choices
        .get(choice_index)
        .ok_or_else(|| ModelError::ChoiceOutOfRange {
            id: inst.id.clone(),
            index: choice_index,
            len: inst.choices.len(),
        })?
        .trim();
    let template = spec.template_for(inst.question_kind.as_deref())?;
    let segments = parse_template(template)?;

    let mut context = inst.context.clone().unwrap_or_default();
    if let Some(placeholder) = &spec.placeholder_token {
        if !context.contains(placeholder.as_str()) {
            return Err(ModelError::MissingPlaceholder {
                id: inst.id.clone(),
                placeholder: placeholder.clone(),
            });
        }
        context = context.replace(placeholder.as_str(), choice);
    }
    let question = inst.question.clone().unwrap_or_default();
    Ok(render(&segments, &context, &question, choice, insertion))
}

/// Builds the answer prefix for a generated question: `_` in the template is
/// replaced with the question body (the text after the question prefix,
/// excluding the question mark). When the question prefix ends in an article
/// that the template does not already supply before `_`, the article stays
/// with the body, so "What is a zoo?" against "_ is" yields "a zoo is".
pub fn substitute_answer_prefix(
    question_prefix: &str,
    generated_question: &str,
    answer_prefix_template: &str,
) -> Result<String, ModelError> {
    if !answer_prefix_template.contains('_') {
        return Ok(answer_prefix_template.to_string());
    }
    let question = generated_question.trim();
    let prefix = question_prefix.trim();
    let rest = question
        .strip_prefix(prefix)
        .ok_or_else(|| ModelError::PrefixMismatch {
            question: question.to_string(),
            prefix: prefix.to_string(),
        })?;
    let mut body = rest.trim().trim_end_matches('?').trim_end().to_string();
    body.retain(|c| c != '?');

    if let Some(article) = prefix.split_whitespace().next_back() {
        if matches!(article, "a" | "an" | "the") {
            let before_slot = answer_prefix_template
                .split('_')
                .next()
                .unwrap_or("")
                .trim_end();
            let template_has_article = before_slot
                .split_whitespace()
                .next_back()
                .map(|w| w == article)
                .unwrap_or(false);
            if !template_has_article {
                body = format!("{article} {body}");
            }
        }
    }
    Ok(collapse_whitespace(&answer_prefix_template.replace('_', &body)))
}
