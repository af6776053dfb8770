//! Self-talk clarification generation: prefix-conditioned question
//! generation, answer generation, and well-formedness filtering.
//!
//! The generator asks the LM information-seeking questions built from
//! curated per-task prefixes, then answers them with the matching answer
//! prefix; the answers become clarifications. Questions are only a means:
//! scoring consumes the clarification texts alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, LmBackend, SamplingParams};
use crate::knowledge::syntactic_subject;
use crate::model::{
    sentence_terminators, substitute_answer_prefix, Clarification,
    ClarificationSource, Instance, ModelError, PrefixPair, TaskSpec,
};

#[derive(Debug, Error)]
pub enum SelfTalkError {
    #[error("task {task} has no question/answer prefix pairs")]
    NoPrefixPairs { task: String },
    #[error("instance {id} has neither context nor question to condition on")]
    NoConditioningText { id: String },
    #[error("no answer prefix registered for question prefix {0:?}")]
    UnknownPrefix(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTalkConfig {
    pub question_top_p: f64,
    pub question_max_new_tokens: usize,
    pub questions_per_prefix: usize,
    pub answer_top_p: f64,
    pub answer_max_new_tokens: usize,
    pub answers_per_question: usize,
    /// Reuse the instance's own question as a clarification question for
    /// tasks whose instances contain one.
    pub reuse_instance_question: bool,
}

impl Default for SelfTalkConfig {
    fn default() -> Self {
        SelfTalkConfig {
            question_top_p: 0.2,
            question_max_new_tokens: 6,
            questions_per_prefix: 5,
            answer_top_p: 0.5,
            answer_max_new_tokens: 10,
            answers_per_question: 10,
            reuse_instance_question: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub question_prefix: String,
    pub text: String,
}

/// Collapses whitespace and glues punctuation-only tokens to the previous
/// word, so the token stream "rain ?" reads "rain?".
pub fn normalize_generated(text: &str) -> String {
    let mut out = String::new();
    for piece in text.split_whitespace() {
        if !out.is_empty() && piece.chars().all(|c| matches!(c, '?' | '.' | '!' | ',' | ';' | ':')) {
            out.push_str(piece);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
        }
    }
    out
}

fn normalized_key(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Replaces the standalone word `X` with the subject, keeping any attached
/// punctuation.
fn instantiate_subject(text: &str, subject: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            let stripped = w.trim_end_matches(|c: char| !c.is_alphanumeric());
            if stripped == "X" {
                format!("{subject}{}", &w[stripped.len()..])
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// The generic row used when a reused instance question matches no curated
/// prefix.
fn fallback_pair() -> PrefixPair {
    PrefixPair {
        question_prefix: "What happened?".to_string(),
        answer_prefix_template: "What happened was".to_string(),
    }
}

/// The task's prefix pairs with `X` instantiated to the instance's
/// syntactic subject.
pub fn resolved_prefix_pairs(spec: &TaskSpec, inst: &Instance) -> Vec<PrefixPair> {
    let subject = inst
        .conditioning_text()
        .and_then(syntactic_subject)
        .unwrap_or_else(|| "X".to_string());
    spec.prefix_pairs
        .iter()
        .map(|pair| PrefixPair {
            question_prefix: instantiate_subject(&pair.question_prefix, &subject),
            answer_prefix_template: instantiate_subject(&pair.answer_prefix_template, &subject),
        })
        .collect()
}

/// Question rule: starts with its prefix, ends with exactly one question
/// mark, has at least one token beyond the prefix (unless the prefix is
/// itself a complete question), and contains no control characters.
pub fn is_well_formed_question(text: &str, question_prefix: &str) -> bool {
    let text = text.trim();
    if !text.starts_with(question_prefix.trim()) {
        return false;
    }
    if !text.ends_with('?') || text.ends_with("??") {
        return false;
    }
    if text.chars().any(|c| c.is_control()) {
        return false;
    }
    if question_prefix.trim_end().ends_with('?') {
        return true;
    }
    let prefix_tokens = question_prefix.split_whitespace().count();
    text.split_whitespace().count() > prefix_tokens
}

/// Clarification rule: at least two tokens beyond the answer prefix, not a
/// verbatim copy of the context, and no unmatched double quote or bracket.
/// (Texts end at a sentence terminator or at the token budget by
/// construction.)
pub fn is_well_formed_clarification(text: &str, answer_prefix: &str, context: Option<&str>) -> bool {
    let text = text.trim();
    if text.is_empty() || text.chars().any(|c| c.is_control()) {
        return false;
    }
    let prefix_tokens = answer_prefix.split_whitespace().count();
    if text.split_whitespace().count() < prefix_tokens + 2 {
        return false;
    }
    if let Some(ctx) = context {
        if normalized_key(text) == normalized_key(ctx) {
            return false;
        }
    }
    if text.matches('"').count() % 2 != 0 {
        return false;
    }
    for (open, close) in [('(', ')'), ('[', ']'), ('{', '}')] {
        if text.matches(open).count() != text.matches(close).count() {
            return false;
        }
    }
    true
}

fn conditioning_text<'a>(inst: &'a Instance) -> Result<&'a str, SelfTalkError> {
    inst.conditioning_text()
        .ok_or_else(|| SelfTalkError::NoConditioningText { id: inst.id.clone() })
}

/// Truncates at the first question mark (inclusive), then normalizes.
fn shape_question(prefix: &str, continuation: &str) -> Option<String> {
    let raw = format!("{prefix} {continuation}");
    let cut = raw.find('?').map(|at| &raw[..=at])?;
    Some(normalize_generated(cut))
}

/// Generates clarification questions for every prefix pair, prepending the
/// instance's own question when configured. Output is deduplicated by
/// normalized text, preserving first-seen order.
pub fn generate_questions<B: LmBackend + ?Sized>(
    backend: &B,
    spec: &TaskSpec,
    inst: &Instance,
    cfg: &SelfTalkConfig,
    seed: u64,
) -> Result<Vec<GeneratedQuestion>, SelfTalkError> {
    if spec.prefix_pairs.is_empty() {
        return Err(SelfTalkError::NoPrefixPairs {
            task: spec.task_id.to_string(),
        });
    }
    let conditioning = conditioning_text(inst)?;
    let pairs = resolved_prefix_pairs(spec, inst);

    let mut seen = std::collections::BTreeSet::new();
    let mut questions = Vec::new();
    let mut push = |questions: &mut Vec<GeneratedQuestion>, prefix: &str, text: String| {
        if seen.insert(normalized_key(&text)) {
            questions.push(GeneratedQuestion {
                question_prefix: prefix.to_string(),
                text,
            });
        }
    };

    if cfg.reuse_instance_question {
        if let Some(q) = inst.question.as_deref().map(str::trim).filter(|q| !q.is_empty()) {
            let matched = pairs
                .iter()
                .filter(|p| q.starts_with(p.question_prefix.trim()))
                .max_by_key(|p| p.question_prefix.len())
                .map(|p| p.question_prefix.clone())
                .unwrap_or_else(|| fallback_pair().question_prefix);
            push(&mut questions, &matched, q.to_string());
        }
    }

    let params = SamplingParams {
        top_p: cfg.question_top_p,
        max_new_tokens: cfg.question_max_new_tokens,
        num_samples: cfg.questions_per_prefix,
        seed: Some(seed),
        stop_sequences: vec![],
    };
    for pair in &pairs {
        let prompt = format!("{conditioning} {}", pair.question_prefix);
        for continuation in backend.sample_continuations(&prompt, &params)? {
            if let Some(question) = shape_question(&pair.question_prefix, &continuation) {
                if is_well_formed_question(&question, &pair.question_prefix) {
                    push(&mut questions, &pair.question_prefix, question);
                }
            }
        }
    }
    Ok(questions)
}

/// Answers one clarification question: builds the answer prefix, prompts
/// with context + question + answer prefix, and keeps the well-formed
/// clarifications.
pub fn generate_answers<B: LmBackend + ?Sized>(
    backend: &B,
    spec: &TaskSpec,
    inst: &Instance,
    question_prefix: &str,
    question_text: &str,
    cfg: &SelfTalkConfig,
    seed: u64,
) -> Result<Vec<Clarification>, SelfTalkError> {
    let conditioning = conditioning_text(inst)?;
    let mut pairs = resolved_prefix_pairs(spec, inst);
    pairs.push(fallback_pair());
    let pair = pairs
        .iter()
        .find(|p| p.question_prefix == question_prefix)
        .ok_or_else(|| SelfTalkError::UnknownPrefix(question_prefix.to_string()))?;

    let answer_prefix = if pair.answer_prefix_template.contains('_') {
        substitute_answer_prefix(question_prefix, question_text, &pair.answer_prefix_template)?
    } else {
        pair.answer_prefix_template.clone()
    };

    let prompt = format!("{conditioning} {question_text} {answer_prefix}");
    let params = SamplingParams {
        top_p: cfg.answer_top_p,
        max_new_tokens: cfg.answer_max_new_tokens,
        num_samples: cfg.answers_per_question,
        seed: Some(seed),
        stop_sequences: vec![],
    };

    let mut out = Vec::new();
    for continuation in backend.sample_continuations(&prompt, &params)? {
        let continuation = continuation.trim();
        if continuation.is_empty() {
            continue;
        }
        // Cut the continuation at its first sentence terminator; a budget-
        // exhausted continuation without one is kept whole.
        let cut = continuation
            .find(sentence_terminators())
            .map(|at| &continuation[..=at])
            .unwrap_or(continuation);
        let text = normalize_generated(&format!("{answer_prefix} {cut}"));
        if !is_well_formed_clarification(&text, &answer_prefix, inst.context.as_deref()) {
            continue;
        }
        let raw_generation = text
            .strip_prefix(answer_prefix.as_str())
            .unwrap_or(cut)
            .to_string();
        out.push(Clarification {
            text,
            source: ClarificationSource::Selftalk,
            question_text: Some(question_text.to_string()),
            question_prefix: Some(question_prefix.to_string()),
            answer_prefix: Some(answer_prefix.clone()),
            raw_generation: Some(raw_generation),
        });
    }
    Ok(out)
}

/// Full self-talk pass over one instance: questions, answers, and a final
/// dedup across questions.
pub fn selftalk_clarifications<B: LmBackend + ?Sized>(
    backend: &B,
    spec: &TaskSpec,
    inst: &Instance,
    cfg: &SelfTalkConfig,
    seed: u64,
) -> Result<Vec<Clarification>, SelfTalkError> {
    let questions = generate_questions(backend, spec, inst, cfg, seed)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for q in &questions {
        for cl in generate_answers(backend, spec, inst, &q.question_prefix, &q.text, cfg, seed)? {
            if seen.insert(normalized_key(&cl.text)) {
                out.push(cl);
            }
        }
    }
    Ok(out)
}
