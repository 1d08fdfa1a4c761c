use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ClassDistribution;
use crate::error::{ClapsError, Result};

/// Digest of (model identity, full input text, ordered class list).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn new(identity: &str, text: &str, classes: &[String]) -> Self {
        let mut h = Sha256::new();
        h.update(identity.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        for c in classes {
            h.update([0x1f]);
            h.update(c.as_bytes());
        }
        CacheKey(h.finalize().into())
    }

    fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(CacheKey(bytes.try_into().ok()?))
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    probs: ClassDistribution,
}

/// Thread-safe response cache, optionally backed by an append-only JSONL file.
pub struct ResponseCache {
    entries: RwLock<HashMap<CacheKey, ClassDistribution>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory(_identity: &str) -> Self {
        ResponseCache {
            entries: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    /// Opens (or creates) `<dir>/<identity-digest>.jsonl` and loads its entries.
    /// A torn final line from an interrupted run is ignored.
    pub fn persistent(identity: &str, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| ClapsError::io(format!("creating cache dir {}", dir.display()), e))?;
        let name = hex::encode(&Sha256::digest(identity.as_bytes())[..8]);
        let path = dir.join(format!("{name}.jsonl"));
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path)
                .map_err(|e| ClapsError::io(format!("opening cache {}", path.display()), e))?;
            for line in BufReader::new(f).lines() {
                let line = line
                    .map_err(|e| ClapsError::io(format!("reading cache {}", path.display()), e))?;
                let Ok(entry) = serde_json::from_str::<Entry>(&line) else {
                    log::warn!("skipping unreadable cache line in {}", path.display());
                    continue;
                };
                if let Some(key) = CacheKey::from_hex(&entry.key) {
                    entries.insert(key, entry.probs);
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ClapsError::io(format!("opening cache {}", path.display()), e))?;
        Ok(ResponseCache {
            entries: RwLock::new(entries),
            file: Some((path, Mutex::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<ClassDistribution> {
        self.entries.read().get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, probs: ClassDistribution) -> Result<()> {
        let mut entries = self.entries.write();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some((path, file)) = &self.file {
            let line = serde_json::to_string(&Entry {
                key: key.to_hex(),
                probs: probs.clone(),
            })
            .expect("cache entry serializes");
            let mut f = file.lock();
            writeln!(f, "{line}")
                .map_err(|e| ClapsError::io(format!("appending to cache {}", path.display()), e))?;
        }
        entries.insert(key, probs);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        vec!["negative".into(), "positive".into()]
    }

    #[test]
    fn key_depends_on_every_component() {
        let base = CacheKey::new("m", "text", &classes());
        assert_ne!(base, CacheKey::new("m2", "text", &classes()));
        assert_ne!(base, CacheKey::new("m", "text ", &classes()));
        let mut swapped = classes();
        swapped.reverse();
        assert_ne!(base, CacheKey::new("m", "text", &swapped));
        assert_eq!(base, CacheKey::new("m", "text", &classes()));
    }

    #[test]
    fn persistent_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("m", "x", &classes());
        let d = ClassDistribution::from_scores(vec![1.0, 3.0]).unwrap();
        {
            let c = ResponseCache::persistent("m", dir.path()).unwrap();
            c.insert(key, d.clone()).unwrap();
            c.insert(key, d.clone()).unwrap();
        }
        let c = ResponseCache::persistent("m", dir.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&key), Some(d));
        // other identities use their own file
        assert!(ResponseCache::persistent("other", dir.path())
            .unwrap()
            .is_empty());
    }
}
