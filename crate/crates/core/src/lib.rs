//! Zero-shot multiple-choice question answering with language-model
//! cross-entropy scoring, improved by generated or retrieved
//! background-knowledge clarifications.
//!
//! The pipeline: [`model`] holds the domain types and prompt assembly;
//! [`backend`] defines the LM contract with a deterministic toy n-gram
//! model and a remote client; [`scorer`] ranks answer choices; [`selftalk`]
//! and [`knowledge`] produce clarifications; [`eval`] measures and analyzes
//! runs; [`runner`] orchestrates batch execution with caching and
//! manifests.

pub mod backend;
pub mod cache;
pub mod dataset;
pub mod eval;
pub mod knowledge;
pub mod model;
pub mod report;
pub mod runner;
pub mod scorer;
pub mod selftalk;
pub mod tasks;

pub use model::{
    ChoiceScore, Clarification, ClarificationSource, Instance, Prediction, PredictionMode,
    PrefixPair, TaskId, TaskSpec,
};
