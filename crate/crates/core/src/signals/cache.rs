//! Disk cache for backend responses: one JSON file per content key holding
//! the raw response and the parsed signal. Values are deterministic functions
//! of their keys, so concurrent last-writer-wins collisions are benign.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::signals::prompts::hex;
use crate::signals::{CanonicalVerdict, NodeSignal, SignalError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedEntry {
    pub raw: String,
    pub anchor_probs: Option<Vec<f64>>,
    pub node: Option<NodeSignal>,
    pub edge: Option<CanonicalVerdict>,
}

#[derive(Debug, Clone)]
pub struct SignalCache {
    dir: PathBuf,
}

impl SignalCache {
    pub fn new(dir: PathBuf) -> Result<Self, SignalError> {
        std::fs::create_dir_all(&dir).map_err(|e| SignalError::Io(e.to_string()))?;
        Ok(Self { dir })
    }

    pub fn content_key(parts: &[&str]) -> String {
        let mut hasher = Sha256::new();
        for p in parts {
            hasher.update(p.as_bytes());
            hasher.update([0u8]);
        }
        hex(&hasher.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CachedEntry> {
        let raw = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&raw).ok()
    }

    pub fn put(&self, key: &str, entry: &CachedEntry) -> Result<(), SignalError> {
        let body = serde_json::to_string(entry).map_err(|e| SignalError::Io(e.to_string()))?;
        std::fs::write(self.path(key), body).map_err(|e| SignalError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SignalCache::new(dir.path().to_path_buf()).unwrap();
        let key = SignalCache::content_key(&["a", "b"]);
        assert!(cache.get(&key).is_none());
        let entry = CachedEntry {
            raw: "8\nok".into(),
            anchor_probs: None,
            node: None,
            edge: None,
        };
        cache.put(&key, &entry).unwrap();
        assert_eq!(cache.get(&key).unwrap().raw, "8\nok");
    }

    #[test]
    fn keys_differ_by_component() {
        let a = SignalCache::content_key(&["x", "y"]);
        let b = SignalCache::content_key(&["x", "z"]);
        let c = SignalCache::content_key(&["xy"]);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
