//! File-defined n-gram language model. Deterministic, inspectable, and
//! cheap: the stand-in for a real scorer/generator in tests and benchmarks.
//!
//! Model files are single JSON documents holding the order, the vocabulary
//! (including a reserved unknown token), per-history log2-probability
//! tables, and backoff weights. Scoring a history absent from the table
//! falls back to the longest present suffix, multiplying in the backoff
//! weight of each history that explicitly defers.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    derive_seed, nucleus_set, BackendDescriptor, BackendError, BackendKind, LmBackend,
    SamplingParams, TokenLogProb,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyLmModel {
    /// n of the n-gram model; histories have up to n-1 tokens.
    pub order: usize,
    pub unk_token: String,
    /// Token that terminates generation when sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token: Option<String>,
    pub vocabulary: Vec<String>,
    /// History (tokens joined by single spaces, "" for the empty history)
    /// to a map of token -> log2 probability.
    pub contexts: BTreeMap<String, BTreeMap<String, f64>>,
    /// Backoff weight per history; missing entries default to 1.0.
    #[serde(default)]
    pub backoff: BTreeMap<String, f64>,
}

impl ToyLmModel {
    pub fn from_file(path: &Path) -> Result<(Self, String), BackendError> {
        let raw = std::fs::read(path).map_err(|source| BackendError::ModelIo {
            path: path.display().to_string(),
            source,
        })?;
        let model: ToyLmModel =
            serde_json::from_slice(&raw).map_err(|e| BackendError::InvalidModel {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        model
            .validate()
            .map_err(|reason| BackendError::InvalidModel {
                path: path.display().to_string(),
                reason,
            })?;
        let digest = hex::encode(Sha256::digest(&raw));
        Ok((model, digest))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.order == 0 {
            return Err("order must be >= 1".into());
        }
        if !self.vocabulary.iter().any(|t| t == &self.unk_token) {
            return Err(format!("unknown token {:?} missing from vocabulary", self.unk_token));
        }
        if !self.contexts.contains_key("") {
            return Err("missing empty-history (unigram) distribution".into());
        }
        for (history, dist) in &self.contexts {
            let len = if history.is_empty() {
                0
            } else {
                history.split(' ').count()
            };
            if len > self.order - 1 {
                return Err(format!("history {history:?} longer than order-1"));
            }
            let sum: f64 = dist.values().map(|lp| lp.exp2()).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("distribution for {history:?} sums to {sum}, not 1"));
            }
            for (token, lp) in dist {
                if *lp > 0.0 {
                    return Err(format!("log-probability above 0 for {token:?} in {history:?}"));
                }
                if !self.vocabulary.iter().any(|t| t == token) {
                    return Err(format!("token {token:?} in {history:?} not in vocabulary"));
                }
            }
        }
        for w in self.backoff.values() {
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(format!("backoff weight {w} outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Lowercase whitespace tokenization, with out-of-vocabulary tokens
    /// mapped to the reserved unknown token.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| {
                let t = t.to_lowercase();
                if self.vocabulary.iter().any(|v| v == &t) {
                    t
                } else {
                    self.unk_token.clone()
                }
            })
            .collect()
    }

    fn history_key(history: &[String]) -> String {
        history.join(" ")
    }

    /// log2 p(token | history). A defined history is authoritative: its
    /// distribution carries the full mass, and absent tokens score zero
    /// probability. An undefined history backs off to its suffix,
    /// multiplying in the history's backoff weight (1.0 when unlisted).
    pub fn logprob(&self, history: &[String], token: &str) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        let mut window = &history[start..];
        let mut weight_bits = 0.0f64;
        loop {
            let key = Self::history_key(window);
            if let Some(dist) = self.contexts.get(&key) {
                return match dist.get(token) {
                    Some(lp) => weight_bits + lp,
                    None => f64::NEG_INFINITY,
                };
            }
            if window.is_empty() {
                return f64::NEG_INFINITY;
            }
            weight_bits += self.backoff.get(&key).copied().unwrap_or(1.0).log2();
            window = &window[1..];
        }
    }

    /// The full next-token distribution after `history`, as probabilities,
    /// normalized over the vocabulary.
    pub fn step_distribution(&self, history: &[String]) -> Vec<(String, f64)> {
        let mut dist: Vec<(String, f64)> = self
            .vocabulary
            .iter()
            .map(|t| (t.clone(), self.logprob(history, t).exp2()))
            .filter(|(_, p)| *p > 0.0)
            .collect();
        let mass: f64 = dist.iter().map(|(_, p)| p).sum();
        if mass > 0.0 {
            for entry in &mut dist {
                entry.1 /= mass;
            }
        }
        dist
    }
}

/// Deterministic [`LmBackend`] over a [`ToyLmModel`]. Stateless per call and
/// fully parallel-safe; the backend id is the hash of the model file.
pub struct ToyBackend {
    model: ToyLmModel,
    descriptor: BackendDescriptor,
}

impl ToyBackend {
    pub fn new(model: ToyLmModel, backend_id: String, max_concurrency: usize) -> Self {
        ToyBackend {
            model,
            descriptor: BackendDescriptor {
                backend_id,
                kind: BackendKind::Toy,
                max_concurrency,
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let (model, digest) = ToyLmModel::from_file(path)?;
        Ok(Self::new(model, format!("toy:{digest}"), 8))
    }

    pub fn model(&self) -> &ToyLmModel {
        &self.model
    }

    fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
        // 53 random mantissa bits; bit-stable across platforms.
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn sample_one(&self, prompt_tokens: &[String], params: &SamplingParams, seed: [u8; 32]) -> String {
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut tokens = prompt_tokens.to_vec();
        let mut generated: Vec<String> = Vec::new();
        for _ in 0..params.max_new_tokens {
            let dist = self.model.step_distribution(&tokens);
            if dist.is_empty() {
                break;
            }
            let nucleus = nucleus_set(&dist, params.top_p);
            let draw = Self::uniform_f64(&mut rng);
            let mut cumulative = 0.0f64;
            let mut picked = nucleus.len() - 1;
            for (i, (_, p)) in nucleus.iter().enumerate() {
                cumulative += p;
                if draw < cumulative {
                    picked = i;
                    break;
                }
            }
            let token = nucleus[picked].0.clone();
            if Some(&token) == self.model.eos_token.as_ref() {
                break;
            }
            tokens.push(token.clone());
            generated.push(token);
            let text = generated.join(" ");
            if let Some(stop) = params
                .stop_sequences
                .iter()
                .filter_map(|s| text.find(s.as_str()).map(|at| (at, s)))
                .min_by_key(|(at, _)| *at)
            {
                return text[..stop.0].trim_end().to_string();
            }
        }
        generated.join(" ")
    }
}

impl LmBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError> {
        let tokens = self.model.tokenize(text);
        if tokens.is_empty() {
            return Err(BackendError::EmptyText);
        }
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(i, token)| TokenLogProb {
                token: token.clone(),
                logprob: self.model.logprob(&tokens[..i], token),
            })
            .collect())
    }

    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        let prompt_tokens = self.model.tokenize(prompt);
        if prompt_tokens.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let root = params.seed.unwrap_or(0);
        Ok((0..params.num_samples)
            .map(|i| self.sample_one(&prompt_tokens, params, derive_seed(root, prompt, i)))
            .collect())
    }
}
