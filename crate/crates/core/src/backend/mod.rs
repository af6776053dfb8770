//! The language-model contract: token-level log-probability scoring and
//! nucleus-sampled continuation, behind which both the deterministic toy
//! n-gram model and the remote completion client sit.

mod cached;
mod remote;
mod toy;

pub use cached::{CachedBackend, CallCounters};
pub use remote::{LogBase, RemoteBackend, RemoteConfig, AUTH_TOKEN_ENV, ENDPOINT_ENV};
pub use toy::{ToyBackend, ToyLmModel};

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("cannot sample from an empty prompt")]
    EmptyPrompt,
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("toy model {path}: {reason}")]
    InvalidModel { path: String, reason: String },
    #[error("failed to read model file {path}: {source}")]
    ModelIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("remote backend failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend {backend_id} does not support {capability}")]
    Capability { backend_id: String, capability: String },
    #[error("remote response malformed: {0}")]
    Protocol(String),
}

/// One scored token: the token text and its log2 conditional probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token: String,
    /// log2 p(token | history); at most 0.
    pub logprob: f64,
}

/// Controls for nucleus-sampled continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop_sequences: Vec<String>,
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidParams(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidParams("max_new_tokens must be >= 1".into()));
        }
        if self.num_samples == 0 {
            return Err(BackendError::InvalidParams("num_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Remote,
}

/// Identity and limits of a backend. `backend_id` must be stable across runs
/// because it keys the response cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub kind: BackendKind,
    pub max_concurrency: usize,
}

pub trait LmBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Scores every token of `text` in order; the i-th entry conditions on
    /// all previous tokens, under the backend's own tokenizer.
    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError>;

    /// Draws up to `num_samples` continuations of `prompt`, each at most
    /// `max_new_tokens` tokens, restricted to the nucleus at each step.
    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError>;
}

impl<T: LmBackend + ?Sized> LmBackend for &T {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError> {
        (**self).score_text(text)
    }
    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError> {
        (**self).sample_continuations(prompt, params)
    }
}

impl LmBackend for Box<dyn LmBackend> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError> {
        (**self).score_text(text)
    }
    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError> {
        (**self).sample_continuations(prompt, params)
    }
}

/// Average bits per token: the arithmetic mean of `-logprob` over all tokens
/// the backend reports for `text`.
pub fn cross_entropy<B: LmBackend + ?Sized>(backend: &B, text: &str) -> Result<f64, BackendError> {
    let scored = backend.score_text(text)?;
    if scored.is_empty() {
        return Err(BackendError::EmptyText);
    }
    Ok(mean_negative_logprob(&scored))
}

/// Shared arithmetic path for cross-entropy so derived values agree exactly.
pub fn mean_negative_logprob(scored: &[TokenLogProb]) -> f64 {
    let total: f64 = scored.iter().map(|t| -t.logprob).sum();
    total / scored.len() as f64
}

/// The smallest prefix of tokens, sorted by descending probability, whose
/// cumulative probability reaches `top_p`, renormalized within the set.
/// Probability ties are broken by lexicographic token order.
pub fn nucleus_set(distribution: &[(String, f64)], top_p: f64) -> Vec<(String, f64)> {
    let mut sorted: Vec<(String, f64)> = distribution
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .cloned()
        .collect();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut cumulative = 0.0f64;
    let mut cutoff = sorted.len();
    for (i, (_, p)) in sorted.iter().enumerate() {
        cumulative += p;
        // Tolerance keeps boundary cases like p = 0.5 + 0.3 stable.
        if cumulative + 1e-12 >= top_p {
            cutoff = i + 1;
            break;
        }
    }
    sorted.truncate(cutoff.max(1).min(sorted.len()));
    let mass: f64 = sorted.iter().map(|(_, p)| p).sum();
    if mass > 0.0 {
        for entry in &mut sorted {
            entry.1 /= mass;
        }
    }
    sorted
}

/// Derives a per-call seed from the run's root seed, the prompt, and the
/// sample index, so scheduling order can never change outputs.
pub fn derive_seed(root: u64, prompt: &str, sample_index: usize) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update((sample_index as u64).to_le_bytes());
    hasher.finalize().into()
}

/// Counting semaphore that admits at most `max_concurrency` calls; excess
/// callers block until a slot frees up.
pub struct AdmissionGate {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl AdmissionGate {
    pub fn new(max_concurrency: usize) -> Self {
        AdmissionGate {
            slots: Mutex::new(max_concurrency.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> AdmissionPermit<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.cv.wait(slots).unwrap();
        }
        *slots -= 1;
        AdmissionPermit { gate: self }
    }
}

pub struct AdmissionPermit<'a> {
    gate: &'a AdmissionGate,
}

impl Drop for AdmissionPermit<'_> {
    fn drop(&mut self) {
        let mut slots = self.gate.slots.lock().unwrap();
        *slots += 1;
        self.gate.cv.notify_one();
    }
}
