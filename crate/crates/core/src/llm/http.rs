use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;

use super::{excerpt, CompletionRequest, CompletionResponse, LlmBackend, LlmConfig, LlmError, Usage};

const MAX_BACKOFF: Duration = Duration::from_secs(60);
const BODY_EXCERPT_CHARS: usize = 512;

/// Client for OpenAI-compatible `/chat/completions` endpoints.
///
/// Retries HTTP 429, 5xx, timeouts and connection failures up to
/// `max_retries` times, sleeping `retry_backoff * 2^i` (capped) before retry
/// `i + 1`. Any other status fails immediately.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(Self::with_api_key(config, api_key))
    }

    pub fn with_api_key(config: &LlmConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            api_key,
            max_retries: config.max_retries,
            backoff: config.retry_backoff(),
            attempts: AtomicU64::new(0),
        }
    }

    /// Total HTTP attempts issued by this client.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn send_once(&self, request: &CompletionRequest) -> Attempt {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(&body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    Attempt::Done(parse_completion(&text))
                } else if status == 429 || status >= 500 {
                    Attempt::Transient(LlmError::Http {
                        status,
                        body: excerpt(&text, BODY_EXCERPT_CHARS),
                        attempts: 0,
                    })
                } else {
                    Attempt::Done(Err(LlmError::Http {
                        status,
                        body: excerpt(&text, BODY_EXCERPT_CHARS),
                        attempts: 0,
                    }))
                }
            }
            Err(e) => {
                let err = LlmError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                };
                match e {
                    ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => {
                        Attempt::Transient(err)
                    }
                    _ => Attempt::Done(Err(err)),
                }
            }
        }
    }
}

enum Attempt {
    Done(Result<CompletionResponse, LlmError>),
    Transient(LlmError),
}

fn with_attempts(err: LlmError, n: u32) -> LlmError {
    match err {
        LlmError::Http { status, body, .. } => LlmError::Http {
            status,
            body,
            attempts: n,
        },
        LlmError::Transport { message, .. } => LlmError::Transport {
            message,
            attempts: n,
        },
        other => other,
    }
}

/// Sleep before each retry: `base * 2^i`, capped, so never decreasing.
pub fn backoff_schedule(base: Duration, retries: u32) -> Vec<Duration> {
    (0..retries)
        .map(|i| {
            base.checked_mul(1u32 << i.min(20))
                .unwrap_or(MAX_BACKOFF)
                .min(MAX_BACKOFF)
        })
        .collect()
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        let schedule = backoff_schedule(self.backoff, self.max_retries);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.send_once(request) {
                Attempt::Done(result) => return result.map_err(|e| with_attempts(e, attempt)),
                Attempt::Transient(err) => {
                    let retry = (attempt - 1) as usize;
                    if retry >= schedule.len() {
                        return Err(with_attempts(err, attempt));
                    }
                    log::debug!("transient failure ({err}); retry {} of {}", retry + 1, schedule.len());
                    std::thread::sleep(schedule[retry]);
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    created: Option<u64>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

pub(crate) fn parse_completion(body: &str) -> Result<CompletionResponse, LlmError> {
    let malformed = |message: String| LlmError::Malformed {
        message,
        body: excerpt(body, BODY_EXCERPT_CHARS),
    };
    let parsed: ChatCompletion =
        serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| malformed("no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| malformed("choice has no message content".into()))?;
    let created = parsed.created.or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    });
    Ok(CompletionResponse {
        text,
        finish_reason: choice.finish_reason,
        usage: parsed.usage,
        created,
        from_cache: false,
    })
}
