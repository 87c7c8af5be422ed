//! Uniform generation interface over an HTTP chat-completion backend and a
//! deterministic scripted backend, plus every prompt template.

mod http;
pub mod prompts;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use prompts::{build_datagen_prompt, build_inference_prompt, FORMAT_REMINDER};
pub use scripted::{ScriptRule, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    /// 0 requests greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        GenerationRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, max_tokens: u32, seed: Option<u64>) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MalformedReason {
    /// Scripted backend had no rule for the prompt and no default.
    NoScriptMatch,
    Body(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("authentication failed (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("malformed response: {}", match .0 {
        MalformedReason::NoScriptMatch => "no scripted rule matched the prompt".to_owned(),
        MalformedReason::Body(m) => m.clone(),
    })]
    ResponseMalformed(MalformedReason),
    #[error("request rejected (HTTP {status}): {body}")]
    RequestRejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_no_script_match(&self) -> bool {
        matches!(self, GatewayError::ResponseMalformed(MalformedReason::NoScriptMatch))
    }
}

/// A generation backend. Implementations are shareable across threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        (**self).generate(req)
    }
}

pub fn generate(backend: &dyn Backend, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
    req.validate()?;
    backend.generate(req)
}
