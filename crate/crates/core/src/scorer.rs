//! Baseline and clarification-conditioned answer scoring.
//!
//! Every choice is scored by the cross-entropy of its combined text; with a
//! clarification list, each choice takes the minimum over all
//! clarification-augmented texts (plus the bare text by default), and the
//! prediction is the argmin over choices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{cross_entropy, BackendError, LmBackend};
use crate::model::{
    argmin_choice, combine, combine_with_insertion, ChoiceScore, Clarification, Instance,
    ModelError, Prediction, PredictionMode, TaskSpec,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("instance {id} has {k} choices; need at least 2 to rank")]
    TooFewChoices { id: String, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Where a clarification is spliced into the scored text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationPlacement {
    /// Between the context and the rest of the combine template.
    #[default]
    AfterContext,
    /// After the full combined option text.
    AppendedAfterOption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    #[serde(default)]
    pub clarification_placement: ClarificationPlacement,
    /// When true the bare option text competes with the augmented texts, so
    /// a useless clarification set can never hurt any choice.
    #[serde(default = "default_true")]
    pub include_bare_option: bool,
    #[serde(default)]
    pub tie_break: TieBreak,
}

fn default_true() -> bool {
    true
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            clarification_placement: ClarificationPlacement::AfterContext,
            include_bare_option: true,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

/// The text scored for one (choice, clarification) pair.
pub fn assemble_scored_text(
    spec: &TaskSpec,
    inst: &Instance,
    choice_index: usize,
    clarification: &Clarification,
    cfg: &ScoringConfig,
) -> Result<String, ModelError> {
    match cfg.clarification_placement {
        ClarificationPlacement::AfterContext => {
            combine_with_insertion(spec, inst, choice_index, Some(clarification.text.trim()))
        }
        ClarificationPlacement::AppendedAfterOption => {
            let base = combine(spec, inst, choice_index)?;
            Ok(format!("{base} {}", clarification.text.trim()))
        }
    }
}

fn validate_for_scoring(inst: &Instance) -> Result<(), ScoreError> {
    inst.validate()?;
    if inst.choices.len() < 2 {
        return Err(ScoreError::TooFewChoices {
            id: inst.id.clone(),
            k: inst.choices.len(),
        });
    }
    Ok(())
}

/// Scores each choice by the cross-entropy of its combined text alone.
pub fn score_baseline<B: LmBackend + ?Sized>(
    backend: &B,
    spec: &TaskSpec,
    inst: &Instance,
) -> Result<Prediction, ScoreError> {
    validate_for_scoring(inst)?;
    let mut choice_scores = Vec::with_capacity(inst.choices.len());
    for i in 0..inst.choices.len() {
        let text = combine(spec, inst, i)?;
        let ce = cross_entropy(backend, &text)?;
        choice_scores.push(ChoiceScore {
            choice_index: i,
            score: ce,
            best_clarification: None,
        });
    }
    let predicted = argmin_choice(&choice_scores);
    Ok(Prediction {
        instance_id: inst.id.clone(),
        choice_scores,
        predicted,
        mode: PredictionMode::Baseline,
        gold: inst.gold,
    })
}

/// Deduplicates by normalized text, keeping the first occurrence and its
/// original index.
fn dedup_clarifications(clarifications: &[Clarification]) -> Vec<(usize, &Clarification)> {
    let mut seen = std::collections::BTreeSet::new();
    let mut kept = Vec::new();
    for (i, cl) in clarifications.iter().enumerate() {
        let norm = cl.text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if !norm.is_empty() && seen.insert(norm) {
            kept.push((i, cl));
        }
    }
    kept
}

/// Scores each choice as the minimum cross-entropy over its
/// clarification-augmented texts; the winning clarification index is
/// recorded when a clarification (not the bare text) achieves the minimum.
/// An empty list with `include_bare_option = false` falls back to baseline
/// scoring, flagged by the returned mode.
pub fn score_with_clarifications<B: LmBackend + ?Sized>(
    backend: &B,
    spec: &TaskSpec,
    inst: &Instance,
    clarifications: &[Clarification],
    cfg: &ScoringConfig,
) -> Result<Prediction, ScoreError> {
    validate_for_scoring(inst)?;
    let kept = dedup_clarifications(clarifications);
    if kept.is_empty() {
        if !cfg.include_bare_option {
            log::warn!(
                "instance {}: empty clarification list without bare option; falling back to baseline",
                inst.id
            );
        }
        return score_baseline(backend, spec, inst);
    }

    let mut choice_scores = Vec::with_capacity(inst.choices.len());
    for i in 0..inst.choices.len() {
        let mut best: Option<(f64, Option<usize>)> = None;
        if cfg.include_bare_option {
            let text = combine(spec, inst, i)?;
            best = Some((cross_entropy(backend, &text)?, None));
        }
        for (orig_index, cl) in &kept {
            let text = assemble_scored_text(spec, inst, i, cl, cfg)?;
            let ce = cross_entropy(backend, &text)?;
            // Strict less-than: ties keep the bare text or the earliest
            // clarification, making the reduction order-free.
            let better = match &best {
                None => true,
                Some((current, _)) => ce < *current,
            };
            if better {
                best = Some((ce, Some(*orig_index)));
            }
        }
        let (score, best_clarification) = best.expect("at least one candidate text");
        choice_scores.push(ChoiceScore {
            choice_index: i,
            score,
            best_clarification,
        });
    }
    let predicted = argmin_choice(&choice_scores);
    Ok(Prediction {
        instance_id: inst.id.clone(),
        choice_scores,
        predicted,
        mode: PredictionMode::Clarified,
        gold: inst.gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyLmModel};
    use crate::model::{ClarificationSource, TaskId};
    use std::collections::BTreeMap;

    fn uniform_backend() -> ToyBackend {
        let tokens = ["a", "b", "c", "d", "e", "f", "g", "<unk>"];
        let lp = -3.0;
        let mut dist = BTreeMap::new();
        for t in tokens {
            dist.insert(t.to_string(), lp);
        }
        let model = ToyLmModel {
            order: 1,
            unk_token: "<unk>".into(),
            eos_token: None,
            vocabulary: tokens.iter().map(|t| t.to_string()).collect(),
            contexts: BTreeMap::from([("".to_string(), dist)]),
            backoff: BTreeMap::new(),
        };
        ToyBackend::new(model, "toy:uniform8".into(), 4)
    }

    fn identity_spec() -> TaskSpec {
        TaskSpec {
            task_id: TaskId::Custom,
            combine_templates: BTreeMap::from([(
                "default".to_string(),
                "[context] [choice]".to_string(),
            )]),
            prefix_pairs: vec![],
            placeholder_token: None,
        }
    }

    fn instance(context: &str, choices: &[&str]) -> Instance {
        Instance {
            id: "i0".into(),
            context: Some(context.to_string()),
            question: None,
            question_kind: None,
            choices: choices.iter().map(|s| s.to_string()).collect(),
            gold: None,
        }
    }

    #[test]
    fn identical_texts_tie_to_lowest_index() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "c d"]);
        let pred = score_baseline(&backend, &spec, &inst).unwrap();
        assert_eq!(pred.choice_scores[0].score, pred.choice_scores[1].score);
        assert_eq!(pred.predicted, 0);
        assert_eq!(pred.mode, PredictionMode::Baseline);
    }

    #[test]
    fn equal_length_texts_tie_under_uniform_lm() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f"]);
        let pred = score_baseline(&backend, &spec, &inst).unwrap();
        assert_eq!(pred.choice_scores[0].score, pred.choice_scores[1].score);
        assert_eq!(pred.predicted, 0);
    }

    #[test]
    fn single_choice_rejected() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c"]);
        assert!(matches!(
            score_baseline(&backend, &spec, &inst),
            Err(ScoreError::TooFewChoices { .. })
        ));
    }

    #[test]
    fn higher_probability_choice_wins() {
        // Bigram model where "b wins" is much likelier than "b loses".
        let model = ToyLmModel {
            order: 2,
            unk_token: "<unk>".into(),
            eos_token: None,
            vocabulary: vec!["b".into(), "wins".into(), "loses".into(), "<unk>".into()],
            contexts: BTreeMap::from([
                (
                    "".to_string(),
                    BTreeMap::from([
                        ("b".to_string(), -1.0),
                        ("wins".to_string(), -3.0),
                        ("loses".to_string(), -3.0),
                        ("<unk>".to_string(), -2.0),
                    ]),
                ),
                (
                    "b".to_string(),
                    BTreeMap::from([
                        ("wins".to_string(), -0.15200309344504997),
                        ("loses".to_string(), -3.321928094887362),
                    ]),
                ),
            ]),
            backoff: BTreeMap::new(),
        };
        assert!(model.validate().is_ok());
        let backend = ToyBackend::new(model, "toy:winner".into(), 1);
        let spec = TaskSpec {
            task_id: TaskId::Custom,
            combine_templates: BTreeMap::from([(
                "default".to_string(),
                "[choice]".to_string(),
            )]),
            prefix_pairs: vec![],
            placeholder_token: None,
        };
        let inst = Instance {
            id: "w".into(),
            context: None,
            question: None,
            question_kind: None,
            choices: vec!["b loses".into(), "b wins".into()],
            gold: None,
        };
        let pred = score_baseline(&backend, &spec, &inst).unwrap();
        assert_eq!(pred.predicted, 1);
    }

    #[test]
    fn clarified_scores_never_exceed_baseline() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f g"]);
        let baseline = score_baseline(&backend, &spec, &inst).unwrap();
        let cl = vec![
            Clarification::simple("c e g", ClarificationSource::Static),
            Clarification::simple("a a a a", ClarificationSource::Static),
        ];
        let cfg = ScoringConfig::default();
        let clarified = score_with_clarifications(&backend, &spec, &inst, &cl, &cfg).unwrap();
        for (b, c) in baseline.choice_scores.iter().zip(&clarified.choice_scores) {
            assert!(c.score <= b.score + 1e-12);
        }
        assert_eq!(clarified.mode, PredictionMode::Clarified);
    }

    #[test]
    fn superset_clarifications_never_increase_scores() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f"]);
        let cfg = ScoringConfig::default();
        let cl1 = vec![Clarification::simple("c", ClarificationSource::Static)];
        let mut cl2 = cl1.clone();
        cl2.push(Clarification::simple("d e", ClarificationSource::Static));
        let p1 = score_with_clarifications(&backend, &spec, &inst, &cl1, &cfg).unwrap();
        let p2 = score_with_clarifications(&backend, &spec, &inst, &cl2, &cfg).unwrap();
        for (a, b) in p1.choice_scores.iter().zip(&p2.choice_scores) {
            assert!(b.score <= a.score + 1e-12);
        }
    }

    #[test]
    fn empty_list_with_bare_option_equals_baseline() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f g"]);
        let baseline = score_baseline(&backend, &spec, &inst).unwrap();
        let cfg = ScoringConfig::default();
        let clarified = score_with_clarifications(&backend, &spec, &inst, &[], &cfg).unwrap();
        assert_eq!(baseline.choice_scores, clarified.choice_scores);
        assert_eq!(clarified.mode, PredictionMode::Baseline);
    }

    #[test]
    fn empty_list_without_bare_option_flags_fallback() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f"]);
        let cfg = ScoringConfig {
            include_bare_option: false,
            ..Default::default()
        };
        let pred = score_with_clarifications(&backend, &spec, &inst, &[], &cfg).unwrap();
        assert_eq!(pred.mode, PredictionMode::Baseline);
    }

    #[test]
    fn best_clarification_matches_reported_score() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c", "d e f"]);
        let cfg = ScoringConfig::default();
        let cl = vec![
            Clarification::simple("g g g g g", ClarificationSource::Static),
            Clarification::simple("a b c d", ClarificationSource::Static),
        ];
        let pred = score_with_clarifications(&backend, &spec, &inst, &cl, &cfg).unwrap();
        for cs in &pred.choice_scores {
            if let Some(idx) = cs.best_clarification {
                let text = assemble_scored_text(&spec, &inst, cs.choice_index, &cl[idx], &cfg).unwrap();
                let ce = cross_entropy(&backend, &text).unwrap();
                assert_eq!(ce, cs.score);
            }
        }
    }

    #[test]
    fn prediction_invariant_under_clarification_permutation() {
        let backend = uniform_backend();
        let spec = identity_spec();
        let inst = instance("a b.", &["c d", "e f g"]);
        let cfg = ScoringConfig::default();
        let cl = vec![
            Clarification::simple("a", ClarificationSource::Static),
            Clarification::simple("b c", ClarificationSource::Static),
            Clarification::simple("d e f", ClarificationSource::Static),
        ];
        let mut reversed = cl.clone();
        reversed.reverse();
        let p1 = score_with_clarifications(&backend, &spec, &inst, &cl, &cfg).unwrap();
        let p2 = score_with_clarifications(&backend, &spec, &inst, &reversed, &cfg).unwrap();
        assert_eq!(p1.predicted, p2.predicted);
        for (a, b) in p1.choice_scores.iter().zip(&p2.choice_scores) {
            assert_eq!(a.score, b.score);
        }
    }

    #[test]
    fn appended_placement_concatenates() {
        let spec = identity_spec();
        let inst = instance("a b.", &["c d"]);
        let cfg = ScoringConfig {
            clarification_placement: ClarificationPlacement::AppendedAfterOption,
            ..Default::default()
        };
        let cl = Clarification::simple("e f.", ClarificationSource::Static);
        let text = assemble_scored_text(&spec, &inst, 0, &cl, &cfg).unwrap();
        assert_eq!(text, "a b. c d e f.");
    }

    #[test]
    fn after_context_placement_splices() {
        let spec = identity_spec();
        let inst = instance("a b.", &["c d"]);
        let cfg = ScoringConfig::default();
        let cl = Clarification::simple("e f.", ClarificationSource::Static);
        let text = assemble_scored_text(&spec, &inst, 0, &cl, &cfg).unwrap();
        assert_eq!(text, "a b. e f. c d");
    }

    #[test]
    fn empty_context_degrades_to_clarification_first() {
        let spec = identity_spec();
        let inst = Instance {
            id: "e".into(),
            context: None,
            question: None,
            question_kind: None,
            choices: vec!["c d".into()],
            gold: None,
        };
        let cfg = ScoringConfig::default();
        let cl = Clarification::simple("e f.", ClarificationSource::Static);
        let text = assemble_scored_text(&spec, &inst, 0, &cl, &cfg).unwrap();
        assert_eq!(text, "e f. c d");
    }
}
