//! Append-only response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 over the length-prefixed model name, prompt and image bytes.
pub fn cache_key(model_name: &str, prompt: &str, image: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(b"cpkit-cache-v1");
    for part in [model_name.as_bytes(), prompt.as_bytes(), image] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

/// Same as [`cache_key`], reading the image from disk.
pub fn cache_key_for_file(model_name: &str, prompt: &str, image: &Path) -> Result<String> {
    let bytes = std::fs::read(image).map_err(|e| Error::io(image, e))?;
    Ok(cache_key(model_name, prompt, &bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub model: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Key/response store backed by a JSON-lines file. Reads run concurrently;
/// appends are serialized. The first entry written for a key wins.
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    file: Mutex<File>,
}

impl ResponseCache {
    /// Opens or creates the cache file. Unreadable lines (e.g. a torn last
    /// write) are skipped with a warning.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.entry(e.key).or_insert(e.response);
                    }
                    Err(err) => warn!("{}:{}: skipping cache line: {err}", path.display(), idx + 1),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !ends_with_newline(path)? {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: &str, response: &str, model: &str) -> Result<()> {
        let mut file = self.file.lock().unwrap();
        {
            let mut entries = self.entries.write().unwrap();
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_string(), response.to_string());
        }
        let entry = CacheEntry {
            key: key.to_string(),
            response: response.to_string(),
            model: model.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn ends_with_newline(path: &Path) -> Result<bool> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.last().is_none_or(|b| *b == b'\n'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_stable_and_sensitive() {
        let k = cache_key("gpt", "prompt", b"img");
        assert_eq!(k, cache_key("gpt", "prompt", b"img"));
        assert_eq!(k.len(), 64);
        assert_ne!(k, cache_key("gpt", "prompu", b"img"));
        assert_ne!(k, cache_key("gpt", "prompt", b"imh"));
        assert_ne!(k, cache_key("gpt2", "prompt", b"img"));
        // length prefixes keep field boundaries apart
        assert_ne!(cache_key("ab", "c", b""), cache_key("a", "bc", b""));
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c/cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            assert!(c.is_empty());
            c.put("k1", "Doral", "m").unwrap();
            c.put("k1", "other", "m").unwrap();
            c.put("k2", "", "m").unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"key\":\"k1\",\"response\":\"Doral\",\"model\":\"m\",\"timestamp\":"));

        std::fs::write(&path, format!("{text}{{\"key\":\"torn")).unwrap();
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get("k1").as_deref(), Some("Doral"));
        assert_eq!(c.get("k2").as_deref(), Some(""));
        assert_eq!(c.len(), 2);
        c.put("k3", "x", "m").unwrap();
        drop(c);
        assert_eq!(ResponseCache::open(&path).unwrap().get("k3").as_deref(), Some("x"));
    }
}
