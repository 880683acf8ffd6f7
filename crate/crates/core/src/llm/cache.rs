use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResponse, LlmError};

/// Fields that identify a cached completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheKey {
    model: String,
    temperature: f64,
    max_tokens: u32,
    prompt: String,
    sample: u32,
}

impl From<&CompletionRequest> for CacheKey {
    fn from(r: &CompletionRequest) -> Self {
        Self {
            model: r.model.clone(),
            temperature: r.temperature,
            max_tokens: r.max_tokens,
            prompt: r.prompt.clone(),
            sample: r.sample,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: CacheKey,
    response: CompletionResponse,
}

/// Hex SHA-256 of the canonical JSON of (model, temperature, max_tokens,
/// prompt, sample).
pub fn cache_key(request: &CompletionRequest) -> String {
    let canonical = serde_json::to_vec(&CacheKey::from(request)).expect("key serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// One JSON file per request under a directory, written atomically.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, request: &CompletionRequest) -> PathBuf {
        self.dir.join(format!("{}.json", cache_key(request)))
    }

    pub fn get(&self, request: &CompletionRequest) -> Result<Option<CompletionResponse>, LlmError> {
        let path = self.path_for(request);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        if entry.request != CacheKey::from(request) {
            log::warn!("cache entry {} does not match its request; ignoring", path.display());
            return Ok(None);
        }
        Ok(Some(entry.response))
    }

    pub fn put(&self, request: &CompletionRequest, response: &CompletionResponse) -> Result<(), LlmError> {
        let path = self.path_for(request);
        let entry = CacheEntry {
            request: request.into(),
            response: response.clone(),
        };
        let mut body = serde_json::to_vec_pretty(&entry).expect("entry serializes");
        body.push(b'\n');
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("entry"),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |e: std::io::Error| LlmError::Cache(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&body).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)
    }
}
