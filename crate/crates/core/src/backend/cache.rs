use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sample, Backend, BackendError, CallCounter, Completion, GenRequest};

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    checksum: String,
    completions: Vec<Completion>,
}

fn checksum(completions: &[Completion]) -> String {
    let body = serde_json::to_string(completions).unwrap_or_default();
    hex::encode(Sha256::digest(body.as_bytes()))
}

/// Outcome of a cache probe.
#[derive(Debug, Clone, PartialEq)]
pub enum CacheLookup {
    Hit(Vec<Completion>),
    Miss,
    /// The entry existed but failed its checksum or did not parse.
    Corrupt,
}

/// On-disk response cache, one JSON file per request key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Content hash of everything that determines a response.
    pub fn key(backend_id: &str, request: &GenRequest) -> String {
        let material = serde_json::json!({
            "backend": backend_id,
            "prompt": request.prompt,
            "temperature": request.temperature.to_string(),
            "n": request.n,
            "stop": request.stop,
        });
        hex::encode(Sha256::digest(material.to_string().as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn lookup(&self, key: &str) -> CacheLookup {
        let Ok(bytes) = std::fs::read(self.path(key)) else {
            return CacheLookup::Miss;
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key && entry.checksum == checksum(&entry.completions) => {
                CacheLookup::Hit(entry.completions)
            }
            _ => CacheLookup::Corrupt,
        }
    }

    pub fn store(&self, key: &str, completions: &[Completion]) -> std::io::Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            checksum: checksum(completions),
            completions: completions.to_vec(),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec(&entry)?)?;
        tmp.persist(self.path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Serves a request from the cache when possible, otherwise samples and stores.
///
/// Hits do not touch the call counter. Corrupt entries are logged, re-fetched
/// and overwritten.
pub fn cached_sample(
    cache: &ResponseCache,
    backend: &dyn Backend,
    request: &GenRequest,
    counter: &CallCounter,
) -> Result<Vec<Completion>, BackendError> {
    let key = ResponseCache::key(&backend.id(), request);
    match cache.lookup(&key) {
        CacheLookup::Hit(completions) if completions.len() == request.n => return Ok(completions),
        CacheLookup::Hit(_) | CacheLookup::Corrupt => {
            warn!("cache entry {key} is corrupt; fetching again");
        }
        CacheLookup::Miss => {}
    }
    let completions = sample(backend, request, counter)?;
    if let Err(e) = cache.store(&key, &completions) {
        warn!("failed to write cache entry {key}: {e}");
    }
    Ok(completions)
}
