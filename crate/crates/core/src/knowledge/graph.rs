//! Concept graph: dump ingestion, a term-keyed index, and path-based
//! clarification extraction.
//!
//! Dumps are tab-separated lines `relation<TAB>head<TAB>tail<TAB>weight`.
//! Queries enumerate simple paths of up to two edges between a context term
//! and a choice term, traversing edges in either direction; each edge is
//! verbalized with its relation's template in the stored head/tail order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{extract_terms, KnowledgeError};
use crate::model::{Clarification, ClarificationSource, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub weight: f64,
}

/// Sentence templates for the supported relations, with `[head]` and
/// `[tail]` slots. Shipped as editable data; this is the built-in table.
pub fn default_relation_templates() -> BTreeMap<String, String> {
    [
        ("IsA", "[head] is a type of [tail]."),
        ("HasPrerequisite", "In order for [head] to happen, [tail] needs to happen."),
        ("Causes", "[head] causes [tail]."),
        ("UsedFor", "[head] is used for [tail]."),
        ("AtLocation", "You are likely to find [head] in [tail]."),
        ("Antonym", "[head] is the opposite of [tail]."),
        ("PartOf", "[head] is part of [tail]."),
        ("CapableOf", "[head] can [tail]."),
        ("Desires", "[head] wants [tail]."),
        ("HasProperty", "[head] is [tail]."),
    ]
    .into_iter()
    .map(|(r, t)| (r.to_string(), t.to_string()))
    .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptGraph {
    edges: Vec<GraphEdge>,
    relation_templates: BTreeMap<String, String>,
    /// Term -> indices of edges touching it, in either role.
    by_term: BTreeMap<String, Vec<usize>>,
}

impl ConceptGraph {
    pub fn new(
        edges: Vec<GraphEdge>,
        relation_templates: BTreeMap<String, String>,
    ) -> Result<Self, KnowledgeError> {
        let mut deduped: BTreeMap<(String, String, String), f64> = BTreeMap::new();
        for e in edges {
            let head = e.head.trim().to_lowercase();
            let tail = e.tail.trim().to_lowercase();
            if head == tail || head.is_empty() || tail.is_empty() {
                continue;
            }
            if !relation_templates.contains_key(&e.relation) {
                return Err(KnowledgeError::MissingTemplate { relation: e.relation });
            }
            deduped.insert((head, e.relation, tail), e.weight);
        }
        let edges: Vec<GraphEdge> = deduped
            .into_iter()
            .map(|((head, relation, tail), weight)| GraphEdge { head, relation, tail, weight })
            .collect();
        let mut by_term: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            by_term.entry(e.head.clone()).or_default().push(i);
            by_term.entry(e.tail.clone()).or_default().push(i);
        }
        Ok(ConceptGraph { edges, relation_templates, by_term })
    }

    /// Parses a `relation<TAB>head<TAB>tail<TAB>weight` dump.
    pub fn from_dump(path: &Path, templates: BTreeMap<String, String>) -> Result<Self, KnowledgeError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
            path: display.clone(),
            source,
        })?;
        let mut edges = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(KnowledgeError::Parse {
                    path: display.clone(),
                    line: i + 1,
                    reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let weight: f64 = fields[3].trim().parse().map_err(|e| KnowledgeError::Parse {
                path: display.clone(),
                line: i + 1,
                reason: format!("bad weight: {e}"),
            })?;
            edges.push(GraphEdge {
                relation: fields[0].trim().to_string(),
                head: fields[1].to_string(),
                tail: fields[2].to_string(),
                weight,
            });
        }
        Self::new(edges, templates)
    }

    pub fn save_index(&self, path: &Path) -> Result<(), KnowledgeError> {
        let raw = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, raw).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_index(path: &Path) -> Result<Self, KnowledgeError> {
        let raw = std::fs::read(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&raw)?)
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.by_term.contains_key(term)
    }

    fn verbalize(&self, edge: &GraphEdge) -> String {
        let template = &self.relation_templates[&edge.relation];
        let mut sentence = template.replace("[head]", &edge.head).replace("[tail]", &edge.tail);
        if let Some(first) = sentence.chars().next() {
            if first.is_lowercase() {
                let mut chars = sentence.chars();
                let upper: String = chars.next().unwrap().to_uppercase().collect();
                sentence = format!("{upper}{}", chars.as_str());
            }
        }
        sentence
    }

    /// All simple paths of at most `max_path_len` edges between `from` and
    /// `to`, each as the ordered list of traversed edge indices.
    fn simple_paths(&self, from: &str, to: &str, max_path_len: usize) -> Vec<Vec<usize>> {
        let mut paths = Vec::new();
        if from == to {
            return paths;
        }
        let empty = Vec::new();
        let from_edges = self.by_term.get(from).unwrap_or(&empty);
        for &e1 in from_edges {
            let edge1 = &self.edges[e1];
            let other = if edge1.head == from { &edge1.tail } else { &edge1.head };
            if other == to {
                paths.push(vec![e1]);
            } else if max_path_len >= 2 {
                for &e2 in self.by_term.get(other).unwrap_or(&empty) {
                    if e2 == e1 {
                        continue;
                    }
                    let edge2 = &self.edges[e2];
                    let far = if edge2.head == *other { &edge2.tail } else { &edge2.head };
                    if far == to && other != from && other != to {
                        paths.push(vec![e1, e2]);
                    }
                }
            }
        }
        paths
    }

    /// Clarifications for every (context term, choice term) pair of the
    /// instance: one per simple path, edges verbalized in path order and
    /// joined with spaces, framed by a relationship question.
    pub fn clarifications(&self, inst: &Instance, max_path_len: usize) -> Vec<Clarification> {
        let (context_terms, choice_terms) = extract_terms(inst);
        let choice_union: BTreeSet<&String> = choice_terms.iter().flatten().collect();
        let mut out = Vec::new();
        for context_term in &context_terms {
            for choice_term in &choice_union {
                if context_term == *choice_term {
                    continue;
                }
                for path in self.simple_paths(context_term, choice_term, max_path_len) {
                    let text = path
                        .iter()
                        .map(|&e| self.verbalize(&self.edges[e]))
                        .collect::<Vec<_>>()
                        .join(" ");
                    out.push(Clarification {
                        text,
                        source: ClarificationSource::Conceptnet,
                        question_text: Some(format!(
                            "What is the relationship between '{context_term}' and '{choice_term}'?"
                        )),
                        question_prefix: None,
                        answer_prefix: None,
                        raw_generation: None,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn edge(relation: &str, head: &str, tail: &str) -> GraphEdge {
        GraphEdge {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            weight: 1.0,
        }
    }

    fn working_instance() -> Instance {
        Instance {
            id: "w".into(),
            context: Some("Working on the elaborate task was taxing".into()),
            question: None,
            question_kind: None,
            choices: vec!["concentration".into(), "holding".into()],
            gold: None,
        }
    }

    #[test]
    fn single_edge_verbalized_through_template() {
        let graph = ConceptGraph::new(
            vec![edge("HasPrerequisite", "working", "concentration")],
            default_relation_templates(),
        )
        .unwrap();
        let cls = graph.clarifications(&working_instance(), 2);
        assert_eq!(cls.len(), 1);
        assert_eq!(
            cls[0].text,
            "In order for working to happen, concentration needs to happen."
        );
        assert_eq!(
            cls[0].question_text.as_deref(),
            Some("What is the relationship between 'working' and 'concentration'?")
        );
        assert_eq!(cls[0].source, ClarificationSource::Conceptnet);
    }

    #[test]
    fn two_edge_path_concatenates_sentences() {
        let graph = ConceptGraph::new(
            vec![
                edge("Causes", "working", "focus"),
                edge("IsA", "focus", "concentration"),
            ],
            default_relation_templates(),
        )
        .unwrap();
        let cls = graph.clarifications(&working_instance(), 2);
        assert_eq!(cls.len(), 1);
        assert_eq!(
            cls[0].text,
            "Working causes focus. Focus is a type of concentration."
        );
    }

    #[test]
    fn reverse_edge_keeps_stored_slot_order() {
        // Edge stored choice-to-context; traversal is context-to-choice.
        let graph = ConceptGraph::new(
            vec![edge("HasPrerequisite", "concentration", "working")],
            default_relation_templates(),
        )
        .unwrap();
        let cls = graph.clarifications(&working_instance(), 2);
        assert_eq!(cls.len(), 1);
        assert_eq!(
            cls[0].text,
            "In order for concentration to happen, working needs to happen."
        );
    }

    #[test]
    fn absent_terms_yield_empty_list() {
        let graph = ConceptGraph::new(
            vec![edge("IsA", "cat", "animal")],
            default_relation_templates(),
        )
        .unwrap();
        assert!(graph.clarifications(&working_instance(), 2).is_empty());
    }

    #[test]
    fn self_loops_dropped_on_ingestion() {
        let graph = ConceptGraph::new(
            vec![edge("IsA", "cat", "cat"), edge("IsA", "cat", "animal")],
            default_relation_templates(),
        )
        .unwrap();
        assert_eq!(graph.edges().len(), 1);
    }

    #[test]
    fn unknown_relation_rejected() {
        let result = ConceptGraph::new(
            vec![edge("MadeOf", "cake", "flour")],
            default_relation_templates(),
        );
        assert!(matches!(result, Err(KnowledgeError::MissingTemplate { .. })));
    }

    #[test]
    fn dump_ingestion_is_idempotent_and_round_trips() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "HasPrerequisite\tworking\tconcentration\t2.5").unwrap();
        writeln!(f, "IsA\tFocus\tConcentration\t1.0").unwrap();
        writeln!(f, "IsA\tfocus\tconcentration\t1.0").unwrap();
        f.flush().unwrap();
        let a = ConceptGraph::from_dump(f.path(), default_relation_templates()).unwrap();
        let b = ConceptGraph::from_dump(f.path(), default_relation_templates()).unwrap();
        assert_eq!(a.edges(), b.edges());
        // Case-normalized duplicates collapse.
        assert_eq!(a.edges().len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let index = dir.path().join("graph.idx.json");
        a.save_index(&index).unwrap();
        let c = ConceptGraph::load_index(&index).unwrap();
        assert_eq!(a.edges(), c.edges());
    }

    #[test]
    fn malformed_dump_line_reports_position() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "IsA\tcat\tanimal\t1.0").unwrap();
        writeln!(f, "IsA\tcat\tanimal").unwrap();
        f.flush().unwrap();
        match ConceptGraph::from_dump(f.path(), default_relation_templates()) {
            Err(KnowledgeError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
