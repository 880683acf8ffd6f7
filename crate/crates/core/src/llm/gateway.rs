use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use super::{CompletionResponse, DiskCache, LlmBackend, LlmError, LlmParams};

/// Prompt-level interface used by the augmentation stages.
pub trait Completer: Send + Sync {
    /// Completes `prompt`; `sample` selects among repeated draws of the same
    /// prompt.
    fn complete_prompt(&self, prompt: &str, sample: u32) -> Result<CompletionResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    /// Requests forwarded to the backend.
    pub backend_calls: u64,
    pub cache_hits: u64,
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// A backend plus fixed parameters, an optional disk cache and an in-flight
/// limit. Safe to share across threads.
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    params: LlmParams,
    cache: Option<DiskCache>,
    limiter: Limiter,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, params: LlmParams) -> Self {
        Self {
            backend,
            params,
            cache: None,
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: 1,
            },
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_concurrency_limit(mut self, limit: usize) -> Self {
        self.limiter.limit = limit.max(1);
        self
    }

    pub fn params(&self) -> &LlmParams {
        &self.params
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

impl Completer for Gateway {
    fn complete_prompt(&self, prompt: &str, sample: u32) -> Result<CompletionResponse, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        let request = self.params.request(prompt, sample);
        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.get(&request)? {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                hit.from_cache = true;
                return Ok(hit);
            }
        }
        let response = {
            let _permit = self.limiter.acquire();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.complete(&request)?
        };
        if let Some(cache) = &self.cache {
            cache.put(&request, &response)?;
        }
        Ok(response)
    }
}

impl<T: Completer + ?Sized> Completer for Arc<T> {
    fn complete_prompt(&self, prompt: &str, sample: u32) -> Result<CompletionResponse, LlmError> {
        (**self).complete_prompt(prompt, sample)
    }
}
