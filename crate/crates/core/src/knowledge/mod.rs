//! External knowledge sources that produce clarifications: concept-graph
//! paths verbalized through relation templates, n-gram co-occurrence
//! fragments, and relation-routed generative prompting.

mod generative;
mod graph;
mod ngrams;
mod terms;

pub use generative::{
    default_routes, generative_kb_clarifications, GenKbConfig, RelationRoute, RouteTable,
    RouteTrigger,
};
pub use graph::{default_relation_templates, ConceptGraph, GraphEdge};
pub use ngrams::{NgramTable, DEFAULT_MIN_FREQ, DEFAULT_TOP_K_PER_PAIR};
pub use terms::{content_terms, extract_terms, is_stopword, syntactic_subject, STOPWORDS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("index serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("relation {relation} has no template")]
    MissingTemplate { relation: String },
    #[error("no relation route matched and no default route is defined")]
    NoRoute,
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}
