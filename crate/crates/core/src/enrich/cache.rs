//! Response cache mirroring the fixture layout under a cache directory.
//!
//! Successful bodies are stored verbatim at `<dir>/<kind>/<key>.json`.
//! Rejections are stored next to them as `<key>.json.rejected` so that a
//! warm re-run does not ask the provider again for answers it already gave.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::provider::Request;
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CachedResponse {
    Ok(String),
    Rejected { status: Option<u16>, body: String },
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, CachedResponse>>,
}

const REJECTED_SUFFIX: &str = ".rejected";

impl ResponseCache {
    /// Memory-only cache.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            memory: Mutex::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, request: &Request) -> io::Result<Option<CachedResponse>> {
        let key = request.cache_key();
        if let Some(hit) = self.memory.lock().unwrap().get(&key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(request.relative_path());
        let found = match std::fs::read_to_string(&path) {
            Ok(body) => Some(CachedResponse::Ok(body)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                match std::fs::read_to_string(rejected_path(&path)) {
                    Ok(raw) => Some(serde_json::from_str(&raw).map_err(io::Error::other)?),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => None,
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        if let Some(hit) = &found {
            self.memory.lock().unwrap().insert(key, hit.clone());
        }
        Ok(found)
    }

    pub fn put(&self, request: &Request, response: CachedResponse) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let path = dir.join(request.relative_path());
            match &response {
                CachedResponse::Ok(body) => write_atomic(&path, body.as_bytes())?,
                rejected => {
                    let raw = serde_json::to_vec(rejected).map_err(io::Error::other)?;
                    write_atomic(&rejected_path(&path), &raw)?;
                }
            }
        }
        self.memory.lock().unwrap().insert(request.cache_key(), response);
        Ok(())
    }
}

fn rejected_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(REJECTED_SUFFIX);
    PathBuf::from(s)
}
