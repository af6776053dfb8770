//! Property tests for the contracts the rest of the pipeline leans on:
//! template purity, nucleus nesting, cross-entropy arithmetic, and the
//! min-over-clarifications monotonicity.

use std::collections::BTreeMap;

use proptest::prelude::*;

use stqa_core::backend::{
    cross_entropy, mean_negative_logprob, nucleus_set, LmBackend, SamplingParams, ToyBackend,
    ToyLmModel,
};
use stqa_core::model::{combine, substitute_answer_prefix, Clarification, ClarificationSource, Instance, TaskId, TaskSpec};
use stqa_core::scorer::{score_baseline, score_with_clarifications, ClarificationPlacement, ScoringConfig};

const WORDS: &[&str] = &[
    "the", "cat", "dog", "sat", "ran", "on", "mat", "rug", "cloud", "rain",
];

fn word() -> impl Strategy<Value = String> {
    proptest::sample::select(WORDS).prop_map(|w| w.to_string())
}

fn phrase(max_words: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(word(), 1..=max_words).prop_map(|ws| ws.join(" "))
}

fn instance() -> impl Strategy<Value = Instance> {
    (
        phrase(5),
        proptest::collection::vec(phrase(3), 2..=4),
        proptest::option::of(phrase(3)),
    )
        .prop_map(|(context, choices, question)| Instance {
            id: "prop".into(),
            context: Some(context),
            question: question.map(|q| format!("{q}?")),
            question_kind: None,
            choices,
            gold: None,
        })
}

fn identity_spec() -> TaskSpec {
    TaskSpec {
        task_id: TaskId::Custom,
        combine_templates: BTreeMap::from([(
            "default".to_string(),
            "[context] [question] [choice]".to_string(),
        )]),
        prefix_pairs: vec![],
        placeholder_token: None,
    }
}

/// Unigram backend with random positive weights over WORDS plus `<unk>`.
fn random_unigram(weights: &[f64]) -> ToyBackend {
    let mut vocab: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
    vocab.push("<unk>".to_string());
    let total: f64 = weights.iter().take(vocab.len()).sum();
    let dist: BTreeMap<String, f64> = vocab
        .iter()
        .zip(weights)
        .map(|(t, w)| (t.clone(), (w / total).log2()))
        .collect();
    let model = ToyLmModel {
        order: 1,
        unk_token: "<unk>".into(),
        eos_token: None,
        vocabulary: vocab,
        contexts: BTreeMap::from([("".to_string(), dist)]),
        backoff: BTreeMap::new(),
    };
    ToyBackend::new(model, "toy:prop".into(), 4)
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..10.0, WORDS.len() + 1)
}

proptest! {
    #[test]
    fn combine_is_pure_and_contains_choice(inst in instance()) {
        let spec = identity_spec();
        for i in 0..inst.choices.len() {
            let a = combine(&spec, &inst, i).unwrap();
            let b = combine(&spec, &inst, i).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.contains(inst.choices[i].trim()));
        }
    }

    #[test]
    fn substituted_prefix_has_no_question_mark(
        body in phrase(4),
        template in proptest::sample::select(vec!["The definition of _ is", "_ is", "As a result of _,"]),
    ) {
        let prefix = "What is";
        let question = format!("{prefix} {body}?");
        let out = substitute_answer_prefix(prefix, &question, template).unwrap();
        prop_assert!(!out.contains('?'));
    }

    #[test]
    fn nucleus_sets_nest(ws in weights(), p1 in 0.01f64..1.0, p2 in 0.01f64..1.0) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let total: f64 = ws.iter().sum();
        let dist: Vec<(String, f64)> = ws
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("t{i:02}"), w / total))
            .collect();
        let small: Vec<String> = nucleus_set(&dist, lo).into_iter().map(|(t, _)| t).collect();
        let large: Vec<String> = nucleus_set(&dist, hi).into_iter().map(|(t, _)| t).collect();
        for t in &small {
            prop_assert!(large.contains(t), "{t} in nucleus({lo}) but not nucleus({hi})");
        }
        let renorm: f64 = nucleus_set(&dist, hi).iter().map(|(_, p)| p).sum();
        prop_assert!((renorm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_is_mean_negative_logprob(ws in weights(), text in phrase(6)) {
        let backend = random_unigram(&ws);
        let scored = backend.score_text(&text).unwrap();
        let ce = cross_entropy(&backend, &text).unwrap();
        prop_assert_eq!(ce, mean_negative_logprob(&scored));
        prop_assert!(ce >= 0.0);
    }

    #[test]
    fn adding_clarifications_never_raises_scores(
        ws in weights(),
        inst in instance(),
        clarification_texts in proptest::collection::vec(phrase(4), 1..4),
        placement_appended in any::<bool>(),
    ) {
        let backend = random_unigram(&ws);
        let spec = identity_spec();
        let cfg = ScoringConfig {
            clarification_placement: if placement_appended {
                ClarificationPlacement::AppendedAfterOption
            } else {
                ClarificationPlacement::AfterContext
            },
            ..Default::default()
        };
        let clarifications: Vec<Clarification> = clarification_texts
            .into_iter()
            .map(|t| Clarification::simple(t, ClarificationSource::Static))
            .collect();

        let baseline = score_baseline(&backend, &spec, &inst).unwrap();
        let mut previous = baseline.choice_scores.clone();
        for upto in 1..=clarifications.len() {
            let current = score_with_clarifications(&backend, &spec, &inst, &clarifications[..upto], &cfg)
                .unwrap()
                .choice_scores;
            for (prev, cur) in previous.iter().zip(&current) {
                prop_assert!(cur.score <= prev.score + 1e-12,
                    "score rose from {} to {} when adding clarification {}", prev.score, cur.score, upto);
            }
            previous = current;
        }
        // With the bare option included, the clarified score never exceeds
        // the baseline score for any choice.
        for (b, c) in baseline.choice_scores.iter().zip(&previous) {
            prop_assert!(c.score <= b.score + 1e-12);
        }
    }

    #[test]
    fn toy_sampling_is_deterministic(ws in weights(), seed in any::<u64>()) {
        let backend = random_unigram(&ws);
        let params = SamplingParams {
            top_p: 0.7,
            max_new_tokens: 4,
            num_samples: 3,
            seed: Some(seed),
            stop_sequences: vec![],
        };
        let a = backend.sample_continuations("the cat", &params).unwrap();
        let b = backend.sample_continuations("the cat", &params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sampled_tokens_lie_in_the_nucleus(ws in weights(), top_p in 0.05f64..1.0, seed in any::<u64>()) {
        let backend = random_unigram(&ws);
        let params = SamplingParams {
            top_p,
            max_new_tokens: 3,
            num_samples: 4,
            seed: Some(seed),
            stop_sequences: vec![],
        };
        let dist = backend.model().step_distribution(&[]);
        let nucleus: Vec<String> = nucleus_set(&dist, top_p).into_iter().map(|(t, _)| t).collect();
        for sample in backend.sample_continuations("rain", &params).unwrap() {
            for token in sample.split_whitespace() {
                prop_assert!(nucleus.iter().any(|t| t == token),
                    "token {token} outside nucleus at p={top_p}");
            }
        }
    }
}
