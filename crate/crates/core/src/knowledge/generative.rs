//! Relation-routed generative knowledge: commonsense-dimension prompts
//! (intents, needs, effects, reactions, wants) answered by a generator
//! backend and wrapped as clarifications.
//!
//! A route maps a question kind or question-prefix pattern to the relations
//! worth generating; without a specific match the default route generates
//! every dimension. `PersonX` in a prompt template is replaced with the
//! instance's syntactic subject when one can be found.

use serde::{Deserialize, Serialize};

use super::{syntactic_subject, KnowledgeError};
use crate::backend::{LmBackend, SamplingParams};
use crate::model::{Clarification, ClarificationSource, Instance};
use crate::selftalk::{is_well_formed_clarification, normalize_generated};

pub const SUBJECT_PLACEHOLDER: &str = "PersonX";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteTrigger {
    /// Matches the instance's question kind exactly.
    QuestionKind(String),
    /// Matches instance questions starting with this pattern; `X` in the
    /// pattern is instantiated with the syntactic subject first.
    QuestionPrefix(String),
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrompt {
    pub relation: String,
    /// Completion prompt, e.g. "As a result, PersonX feels".
    pub prompt_template: String,
    /// Display question attached to generated clarifications.
    pub question_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRoute {
    pub trigger: RouteTrigger,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTable {
    pub prompts: Vec<RelationPrompt>,
    pub routes: Vec<RelationRoute>,
    #[serde(default = "default_true")]
    pub subject_substitution: bool,
}

fn default_true() -> bool {
    true
}

fn prompt(relation: &str, prompt_template: &str, question_template: &str) -> RelationPrompt {
    RelationPrompt {
        relation: relation.to_string(),
        prompt_template: prompt_template.to_string(),
        question_template: question_template.to_string(),
    }
}

/// Built-in route table: pre-condition relations for cause questions,
/// post-condition relations for effect questions, prefix-based routing for
/// social-interaction questions, and an all-dimensions default.
pub fn default_routes() -> RouteTable {
    RouteTable {
        prompts: vec![
            prompt("xIntent", "PersonX did this because they wanted", "Why did PersonX do this?"),
            prompt("xNeed", "Before doing that, PersonX first had to", "What does PersonX need to do before this?"),
            prompt("xAttr", "PersonX is a", "How would you describe PersonX?"),
            prompt("xEffect", "As a result, PersonX", "What happened to PersonX as a result?"),
            prompt("xReact", "As a result, PersonX feels", "What does PersonX feel as a result?"),
            prompt("xWant", "As a result, PersonX wants", "What does PersonX want as a result?"),
            prompt("oEffect", "As a result, others", "What happens to others as a result?"),
            prompt("oReact", "As a result, others feel", "What do others feel as a result?"),
            prompt("oWant", "As a result, others want", "What do others want as a result?"),
        ],
        routes: vec![
            RelationRoute {
                trigger: RouteTrigger::QuestionKind("cause".into()),
                relations: vec!["xIntent".into(), "xNeed".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionKind("effect".into()),
                relations: vec![
                    "xEffect".into(),
                    "xReact".into(),
                    "xWant".into(),
                    "oEffect".into(),
                    "oReact".into(),
                    "oWant".into(),
                ],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("What will X want".into()),
                relations: vec!["xWant".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("How would X feel".into()),
                relations: vec!["xReact".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("How would you describe X".into()),
                relations: vec!["xAttr".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("What kind of person is X".into()),
                relations: vec!["xAttr".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("Why did X".into()),
                relations: vec!["xIntent".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("What does X need to do".into()),
                relations: vec!["xNeed".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("What did X need to do".into()),
                relations: vec!["xNeed".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::QuestionPrefix("What will happen to X".into()),
                relations: vec!["xEffect".into(), "oEffect".into()],
            },
            RelationRoute {
                trigger: RouteTrigger::Default,
                relations: vec![
                    "xIntent".into(),
                    "xNeed".into(),
                    "xAttr".into(),
                    "xEffect".into(),
                    "xReact".into(),
                    "xWant".into(),
                    "oEffect".into(),
                    "oReact".into(),
                    "oWant".into(),
                ],
            },
        ],
        subject_substitution: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenKbConfig {
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub samples_per_relation: usize,
}

impl Default for GenKbConfig {
    fn default() -> Self {
        GenKbConfig {
            top_p: 0.5,
            max_new_tokens: 10,
            samples_per_relation: 10,
        }
    }
}

fn instantiate_x(pattern: &str, subject: &str) -> String {
    pattern
        .split_whitespace()
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

/// Relations the instance routes to: the first matching trigger wins,
/// otherwise the default route applies.
pub fn matched_relations<'a>(
    routes: &'a RouteTable,
    inst: &Instance,
    subject: &str,
) -> Result<&'a [String], KnowledgeError> {
    let mut default_route: Option<&RelationRoute> = None;
    for route in &routes.routes {
        match &route.trigger {
            RouteTrigger::QuestionKind(kind) => {
                if inst.question_kind.as_deref() == Some(kind.as_str()) {
                    return Ok(&route.relations);
                }
            }
            RouteTrigger::QuestionPrefix(pattern) => {
                if let Some(q) = inst.question.as_deref() {
                    let instantiated = instantiate_x(pattern, subject);
                    if q.starts_with(&instantiated) || q.starts_with(pattern.as_str()) {
                        return Ok(&route.relations);
                    }
                }
            }
            RouteTrigger::Default => default_route = Some(route),
        }
    }
    default_route
        .map(|r| r.relations.as_slice())
        .ok_or(KnowledgeError::NoRoute)
}

/// Generates clarifications for every routed relation of the instance.
pub fn generative_kb_clarifications<B: LmBackend + ?Sized>(
    backend: &B,
    routes: &RouteTable,
    inst: &Instance,
    cfg: &GenKbConfig,
    seed: u64,
) -> Result<Vec<Clarification>, KnowledgeError> {
    let conditioning = match inst.conditioning_text() {
        Some(text) => text.to_string(),
        None => return Ok(Vec::new()),
    };
    let subject = if routes.subject_substitution {
        syntactic_subject(&conditioning).unwrap_or_else(|| SUBJECT_PLACEHOLDER.to_string())
    } else {
        SUBJECT_PLACEHOLDER.to_string()
    };
    let relations = matched_relations(routes, inst, &subject)?;

    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for relation in relations {
        let Some(rp) = routes.prompts.iter().find(|p| &p.relation == relation) else {
            return Err(KnowledgeError::MissingTemplate { relation: relation.clone() });
        };
        let answer_prefix = rp.prompt_template.replace(SUBJECT_PLACEHOLDER, &subject);
        let question = rp.question_template.replace(SUBJECT_PLACEHOLDER, &subject);
        let prompt_text = format!("{conditioning} {answer_prefix}");
        let params = SamplingParams {
            top_p: cfg.top_p,
            max_new_tokens: cfg.max_new_tokens,
            num_samples: cfg.samples_per_relation,
            seed: Some(seed),
            stop_sequences: vec![],
        };
        for continuation in backend.sample_continuations(&prompt_text, &params)? {
            let continuation = continuation.trim();
            if continuation.is_empty() {
                continue;
            }
            let cut = continuation
                .find(crate::model::sentence_terminators())
                .map(|at| &continuation[..=at])
                .unwrap_or(continuation);
            let text = normalize_generated(&format!("{answer_prefix} {cut}"));
            if !is_well_formed_clarification(&text, &answer_prefix, inst.context.as_deref()) {
                continue;
            }
            if !seen.insert(text.to_lowercase()) {
                continue;
            }
            let raw_generation = text
                .strip_prefix(answer_prefix.as_str())
                .unwrap_or(cut)
                .to_string();
            out.push(Clarification {
                text,
                source: ClarificationSource::GenerativeKb,
                question_text: Some(question.clone()),
                question_prefix: None,
                answer_prefix: Some(answer_prefix.clone()),
                raw_generation: Some(raw_generation),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, ToyLmModel};
    use std::collections::BTreeMap;

    fn copa_instance(kind: &str) -> Instance {
        Instance {
            id: "c".into(),
            context: Some("Carson played video games.".into()),
            question: None,
            question_kind: Some(kind.into()),
            choices: vec!["a".into(), "b".into()],
            gold: None,
        }
    }

    #[test]
    fn cause_routes_to_preconditions() {
        let routes = default_routes();
        let relations = matched_relations(&routes, &copa_instance("cause"), "Carson").unwrap();
        assert_eq!(relations, &["xIntent".to_string(), "xNeed".to_string()]);
    }

    #[test]
    fn effect_routes_to_postconditions() {
        let routes = default_routes();
        let relations = matched_relations(&routes, &copa_instance("effect"), "Carson").unwrap();
        assert_eq!(relations.len(), 6);
        assert!(relations.contains(&"oWant".to_string()));
    }

    #[test]
    fn social_question_routes_by_prefix() {
        let routes = default_routes();
        let inst = Instance {
            id: "s".into(),
            context: Some("Carson was at a friends house.".into()),
            question: Some("What does Carson need to do before this?".into()),
            question_kind: None,
            choices: vec!["a".into(), "b".into()],
            gold: None,
        };
        let relations = matched_relations(&routes, &inst, "Carson").unwrap();
        assert_eq!(relations, &["xNeed".to_string()]);
    }

    #[test]
    fn unmatched_instance_uses_default_route() {
        let routes = default_routes();
        let inst = Instance {
            id: "d".into(),
            context: Some("Something happened.".into()),
            question: Some("Is this fine?".into()),
            question_kind: None,
            choices: vec!["a".into(), "b".into()],
            gold: None,
        };
        let relations = matched_relations(&routes, &inst, "Something").unwrap();
        assert_eq!(relations.len(), 9);
    }

    #[test]
    fn no_default_route_is_an_error() {
        let mut routes = default_routes();
        routes.routes.retain(|r| r.trigger != RouteTrigger::Default);
        let inst = Instance {
            id: "d".into(),
            context: Some("Something happened.".into()),
            question: None,
            question_kind: None,
            choices: vec!["a".into(), "b".into()],
            gold: None,
        };
        assert!(matches!(
            matched_relations(&routes, &inst, "X"),
            Err(KnowledgeError::NoRoute)
        ));
    }

    #[test]
    fn generated_clarifications_substitute_subject() {
        // Trigram walk: "... Carson first had to" -> "ask politely for it".
        let vocab: Vec<String> = [
            "carson", "played", "video", "games.", "before", "doing", "that,", "first", "had",
            "to", "ask", "politely", "for", "it", "<unk>",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let n = vocab.len() as f64;
        let unigram: BTreeMap<String, f64> = vocab.iter().map(|t| (t.clone(), -n.log2())).collect();
        let mut contexts = BTreeMap::from([("".to_string(), unigram)]);
        let certain = |t: &str| BTreeMap::from([(t.to_string(), 0.0)]);
        contexts.insert("had to".into(), certain("ask"));
        contexts.insert("to ask".into(), certain("politely"));
        contexts.insert("ask politely".into(), certain("for"));
        contexts.insert("politely for".into(), certain("it"));
        contexts.insert("for it".into(), certain("it"));
        contexts.insert("it it".into(), certain("it"));
        let model = ToyLmModel {
            order: 3,
            unk_token: "<unk>".into(),
            eos_token: None,
            vocabulary: vocab,
            contexts,
            backoff: BTreeMap::new(),
        };
        assert!(model.validate().is_ok());
        let backend = ToyBackend::new(model, "toy:genkb".into(), 2);

        let mut routes = default_routes();
        // Route everything to xNeed for a focused walk.
        routes.routes = vec![RelationRoute {
            trigger: RouteTrigger::Default,
            relations: vec!["xNeed".into()],
        }];
        let inst = Instance {
            id: "g".into(),
            context: Some("Carson played video games.".into()),
            question: None,
            question_kind: None,
            choices: vec!["a".into(), "b".into()],
            gold: None,
        };
        let cfg = GenKbConfig {
            max_new_tokens: 4,
            ..Default::default()
        };
        let cls = generative_kb_clarifications(&backend, &routes, &inst, &cfg, 0).unwrap();
        assert_eq!(cls.len(), 1);
        assert_eq!(cls[0].text, "Before doing that, Carson first had to ask politely for it");
        assert_eq!(cls[0].source, ClarificationSource::GenerativeKb);
        assert_eq!(
            cls[0].question_text.as_deref(),
            Some("What does Carson need to do before this?")
        );
    }

    #[test]
    fn missing_subject_keeps_placeholder() {
        let routes = default_routes();
        let inst = Instance {
            id: "p".into(),
            context: Some("was raining all day".into()),
            question: None,
            question_kind: Some("cause".into()),
            choices: vec!["a".into(), "b".into()],
            gold: None,
        };
        let subject = syntactic_subject(inst.conditioning_text().unwrap())
            .unwrap_or_else(|| SUBJECT_PLACEHOLDER.to_string());
        assert_eq!(subject, SUBJECT_PLACEHOLDER);
        let relations = matched_relations(&routes, &inst, &subject).unwrap();
        assert_eq!(relations.len(), 2);
    }
}
