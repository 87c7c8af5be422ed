use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, GatewayError, GenerationRequest, GenerationResponse, MalformedReason};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "SR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    /// Ignore HTTP(S)_PROXY environment settings.
    pub no_proxy: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "self-reasoning".into(),
            timeout_ms: 120_000,
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff_ms: 500,
            no_proxy: false,
        }
    }
}

/// Chat-completion client: `POST {base_url}/chat/completions`.
pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: String,
    client: Client,
    id: String,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig, api_key: impl Into<String>) -> Result<Self, GatewayError> {
        if cfg.base_url.is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        if cfg.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        let mut builder = Client::builder().timeout(Duration::from_millis(cfg.timeout_ms));
        if cfg.no_proxy {
            builder = builder.no_proxy();
        }
        let client = builder.build().map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend {
            id: format!("http:{}", cfg.model_name),
            slots: Slots::new(cfg.max_in_flight),
            api_key: api_key.into(),
            client,
            cfg,
        })
    }

    /// Credential from `SR_API_KEY`.
    pub fn from_env(cfg: HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Config(format!("{API_KEY_ENV} is not set")))?;
        HttpBackend::new(cfg, key)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn body(&self, req: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let resp = match self.client.post(self.endpoint()).bearer_auth(&self.api_key).json(body).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fatal(GatewayError::AuthFailure { status: status.as_u16() });
        }
        if is_retryable_status(status) {
            return Attempt::Transient(format!("HTTP {}", status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::RequestRejected { status: status.as_u16(), body: text });
        }
        Attempt::Done(parse_completion(&text, &self.id))
    }
}

fn is_retryable_status(status: StatusCode) -> bool {
    matches!(status.as_u16(), 408 | 429 | 500 | 502 | 503 | 504)
}

enum Attempt {
    Done(Result<GenerationResponse, GatewayError>),
    Transient(String),
    Fatal(GatewayError),
}

fn parse_completion(text: &str, backend_id: &str) -> Result<GenerationResponse, GatewayError> {
    let malformed = |m: String| GatewayError::ResponseMalformed(MalformedReason::Body(m));
    let v: Value = serde_json::from_str(text).map_err(|e| malformed(format!("not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing choices[0].message.content".into()))?;
    let count = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
    Ok(GenerationResponse {
        text: content.to_owned(),
        prompt_tokens: count("/usage/prompt_tokens"),
        completion_tokens: count("/usage/completion_tokens"),
        backend_id: backend_id.to_owned(),
    })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        req.validate()?;
        let _slot = self.slots.acquire();
        let body = self.body(req);
        let mut backoff = Duration::from_millis(self.cfg.initial_backoff_ms);
        let mut last_error = String::new();
        let attempts = self.cfg.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                log::warn!("retrying {} in {:?} after: {last_error}", self.endpoint(), backoff);
                thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(&body) {
                Attempt::Done(result) => return result,
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => last_error = msg,
            }
        }
        Err(GatewayError::BackendUnavailable { attempts, last_error })
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}
