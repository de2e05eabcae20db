//! Content-addressed response cache. Keys are the SHA-256 of the request's
//! canonical JSON (object keys sorted, no whitespace).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::io::{atomic_write, IoError};

/// `serde_json::Value` keeps object keys in a `BTreeMap`, so printing a
/// value is already canonical.
pub fn canonical_json(value: &Value) -> String {
    value.to_string()
}

pub fn key_of_value(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

pub fn key_of<T: Serialize>(req: &T) -> String {
    key_of_value(&serde_json::to_value(req).expect("request serializes"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: Value,
    pub response: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, key: &str) -> Option<String> {
        let text = fs::read_to_string(self.path_for(key)).ok()?;
        serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.response)
    }

    /// Write-once: an existing entry is left alone.
    pub fn put(&self, key: &str, request: &Value, response: &str) -> Result<(), IoError> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(());
        }
        let entry = CacheEntry {
            request: request.clone(),
            response: response.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        // A per-thread temp name keeps concurrent writers of one key apart.
        let tmp = path.with_extension(format!("{:?}.tmp", std::thread::current().id()).replace(['(', ')'], ""));
        atomic_write(&tmp, |w| {
            serde_json::to_writer(w, &entry).map_err(std::io::Error::other)
        })?;
        fs::rename(&tmp, &path).map_err(crate::io::io_err(&path))
    }
}
