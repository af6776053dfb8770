//! Caching and admission-control wrapper around any [`LmBackend`].
//!
//! Responses are cached verbatim, keyed by (backend id, operation, prompt,
//! params), and concurrent calls to the inner backend are capped at its
//! declared `max_concurrency`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{AdmissionGate, BackendDescriptor, BackendError, LmBackend, SamplingParams, TokenLogProb};
use crate::cache::{cache_key, ResponseCache};

#[derive(Debug, Default)]
pub struct CallCounters {
    pub computed: AtomicU64,
    pub cache_hits: AtomicU64,
}

impl CallCounters {
    pub fn computed(&self) -> u64 {
        self.computed.load(Ordering::SeqCst)
    }
    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

pub struct CachedBackend<B> {
    inner: B,
    cache: Option<ResponseCache>,
    gate: AdmissionGate,
    counters: Arc<CallCounters>,
}

impl<B: LmBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Option<ResponseCache>) -> Self {
        let gate = AdmissionGate::new(inner.descriptor().max_concurrency);
        CachedBackend {
            inner,
            cache,
            gate,
            counters: Arc::new(CallCounters::default()),
        }
    }

    pub fn counters(&self) -> Arc<CallCounters> {
        self.counters.clone()
    }

    fn run<V, F>(&self, key: &str, compute: F) -> Result<V, BackendError>
    where
        V: serde::Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<V, BackendError>,
    {
        let gated = || {
            let _permit = self.gate.acquire();
            compute()
        };
        match &self.cache {
            None => {
                self.counters.computed.fetch_add(1, Ordering::SeqCst);
                gated()
            }
            Some(cache) => {
                let outcome = cache.get_or_compute(key, || {
                    self.counters.computed.fetch_add(1, Ordering::SeqCst);
                    gated()
                })?;
                if outcome.hit {
                    self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                }
                Ok(outcome.value)
            }
        }
    }
}

impl<B: LmBackend> LmBackend for CachedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError> {
        let key = cache_key(&self.inner.descriptor().backend_id, "score", text, "{}");
        self.run(&key, || self.inner.score_text(text))
    }

    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError> {
        let params_json = serde_json::to_string(params).expect("params serialize");
        let key = cache_key(
            &self.inner.descriptor().backend_id,
            "sample",
            prompt,
            &params_json,
        );
        self.run(&key, || self.inner.sample_continuations(prompt, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyLmModel;
    use crate::backend::ToyBackend;
    use std::collections::BTreeMap;

    fn tiny_backend() -> ToyBackend {
        let model = ToyLmModel {
            order: 1,
            unk_token: "<unk>".into(),
            eos_token: None,
            vocabulary: vec!["a".into(), "b".into(), "<unk>".into()],
            contexts: BTreeMap::from([(
                "".to_string(),
                BTreeMap::from([("a".to_string(), -1.0), ("b".to_string(), -1.0)]),
            )]),
            backoff: BTreeMap::new(),
        };
        ToyBackend::new(model, "toy:tiny".into(), 2)
    }

    #[test]
    fn warm_cache_avoids_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let backend = CachedBackend::new(tiny_backend(), Some(cache));
        let first = backend.score_text("a b a").unwrap();
        let second = backend.score_text("a b a").unwrap();
        assert_eq!(first, second);
        assert_eq!(backend.counters().computed(), 1);
        assert_eq!(backend.counters().cache_hits(), 1);
    }

    #[test]
    fn cold_and_warm_results_identical_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let params = SamplingParams {
            top_p: 1.0,
            max_new_tokens: 3,
            num_samples: 4,
            seed: Some(1),
            stop_sequences: vec![],
        };
        let cold = {
            let cache = ResponseCache::open(dir.path()).unwrap();
            let backend = CachedBackend::new(tiny_backend(), Some(cache));
            backend.sample_continuations("a", &params).unwrap()
        };
        let warm_backend = CachedBackend::new(
            tiny_backend(),
            Some(ResponseCache::open(dir.path()).unwrap()),
        );
        let warm = warm_backend.sample_continuations("a", &params).unwrap();
        assert_eq!(cold, warm);
        assert_eq!(warm_backend.counters().computed(), 0);
    }
}
