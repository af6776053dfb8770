//! Content-addressed on-disk cache for backend responses. Values are stored
//! verbatim so scoring-logic changes never invalidate expensive LM calls.
//! Writes go through a temp file and an atomic rename; corrupt entries are
//! recomputed and overwritten.

use std::path::PathBuf;

use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Digest of (backend id, operation kind, prompt, params); the cache file
/// name is this digest.
pub fn cache_key(backend_id: &str, operation: &str, prompt: &str, params_json: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [backend_id, operation, prompt, params_json] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    /// Digest of the serialized value, checked on read.
    value_digest: String,
    created_at: String,
    value: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| CacheError::Io {
            path: root.display().to_string(),
            source,
        })?;
        Ok(ResponseCache { root })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    fn value_digest(value: &serde_json::Value) -> String {
        let bytes = serde_json::to_vec(value).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn read_entry<V: DeserializeOwned>(&self, key: &str) -> Option<V> {
        let path = self.entry_path(key);
        let raw = std::fs::read(&path).ok()?;
        let entry: CacheEntry = match serde_json::from_slice(&raw) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("corrupt cache entry {}: {e}; recomputing", path.display());
                return None;
            }
        };
        if entry.key != key || Self::value_digest(&entry.value) != entry.value_digest {
            log::warn!("cache entry {} failed digest check; recomputing", path.display());
            return None;
        }
        match serde_json::from_value(entry.value) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("cache entry {} has wrong shape: {e}; recomputing", path.display());
                None
            }
        }
    }

    fn write_entry(&self, key: &str, value: &serde_json::Value) -> Result<(), CacheError> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir).map_err(|source| CacheError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let entry = CacheEntry {
            key: key.to_string(),
            value_digest: Self::value_digest(value),
            created_at: Utc::now().to_rfc3339(),
            value: value.clone(),
        };
        let tmp = dir.join(format!(
            ".{key}.{}.tmp",
            std::process::id()
        ));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&entry)?).map_err(|source| {
            CacheError::Io {
                path: tmp.display().to_string(),
                source,
            }
        })?;
        // Concurrent writers of the same key race benignly: values are
        // deterministic, so last writer wins with identical bytes.
        std::fs::rename(&tmp, &path).map_err(|source| CacheError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    /// Returns the stored value for `key`, or computes, stores, and returns
    /// it. Compute errors are propagated and nothing is stored.
    pub fn get_or_compute<V, E, F>(&self, key: &str, compute: F) -> Result<CacheOutcome<V>, E>
    where
        V: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<V, E>,
    {
        if let Some(value) = self.read_entry::<V>(key) {
            return Ok(CacheOutcome { value, hit: true });
        }
        let value = compute()?;
        let json = serde_json::to_value(&value).expect("cache value serializes");
        if let Err(e) = self.write_entry(key, &json) {
            // A read-only cache degrades to a pass-through.
            log::warn!("failed to store cache entry {key}: {e}");
        }
        Ok(CacheOutcome { value, hit: false })
    }
}

#[derive(Debug)]
pub struct CacheOutcome<V> {
    pub value: V,
    pub hit: bool,
}
