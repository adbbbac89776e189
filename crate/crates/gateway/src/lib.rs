//! Blocking client for chat-completion HTTP endpoints.
//!
//! The wire protocol is the de-facto chat-completion JSON shape: a messages
//! array in, a choices array out. Requests are validated and serialized
//! byte-stably, sent with exponential-backoff retries on transient failures,
//! and decoded into a [`Generation`]. [`Client::generate_batch`] fans a
//! request list over a bounded worker pool and returns results in request
//! order.
//!
//! The client never updates model weights; it exists for offline scoring and
//! judged-corpus construction against already-served models.

use std::sync::Arc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod testing;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_TOP_P: f64 = 0.95;

/// One failed delivery attempt; all variants are retried.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttemptError {
    #[error("rate limited")]
    RateLimited,
    #[error("server error (status {0})")]
    Server(u16),
    #[error("transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Malformed or contract-breaking response body. Never retried: the
    /// round trip succeeded, so a resend would change nothing.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: AttemptError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    pub model_name: String,
}

impl GenerationRequest {
    /// Request with the default sampling knobs (temperature 0.6, top_p 0.95).
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>, max_tokens: u32) -> Self {
        Self {
            messages,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_tokens,
            want_logprobs: false,
            model_name: model_name.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::InvalidRequest("model_name must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub token_count: u32,
    pub per_token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
}

/// Wire form of a request. Field order is fixed by this struct, so equal
/// inputs serialize to equal bytes.
#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "is_false")]
    logprobs: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: WireUsage,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: String,
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireLogprobs {
    content: Vec<WireTokenLogprob>,
}

#[derive(Deserialize)]
struct WireTokenLogprob {
    logprob: f64,
}

#[derive(Deserialize)]
struct WireUsage {
    completion_tokens: u32,
}

/// Validates and serializes `req` to its wire form.
pub fn encode_request(req: &GenerationRequest) -> Result<String, GatewayError> {
    req.validate()?;
    let wire = WireRequest {
        model: &req.model_name,
        messages: &req.messages,
        temperature: req.temperature,
        top_p: req.top_p,
        max_tokens: req.max_tokens,
        logprobs: req.want_logprobs,
    };
    serde_json::to_string(&wire).map_err(|e| GatewayError::InvalidRequest(e.to_string()))
}

fn decode_response(body: &str, req: &GenerationRequest) -> Result<Generation, GatewayError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_str() {
        "stop" => FinishReason::Stop,
        "length" => FinishReason::Length,
        other => {
            return Err(GatewayError::Protocol(format!("unknown finish_reason {other:?}")));
        }
    };
    let token_count = wire.usage.completion_tokens;
    if finish_reason == FinishReason::Length && token_count != req.max_tokens {
        return Err(GatewayError::Protocol(format!(
            "finish_reason length with token_count {} != max_tokens {}",
            token_count, req.max_tokens
        )));
    }
    let per_token_logprobs =
        choice.logprobs.map(|lp| lp.content.into_iter().map(|t| t.logprob).collect());
    Ok(Generation { text: choice.message.content, token_count, per_token_logprobs, finish_reason })
}

/// Endpoint, credentials and delivery knobs. `from_env` reads GAR_ENDPOINT,
/// GAR_MODEL and GAR_API_KEY.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl GatewayConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint = std::env::var("GAR_ENDPOINT").map_err(|_| {
            GatewayError::InvalidRequest("GAR_ENDPOINT environment variable not set".into())
        })?;
        let mut cfg = Self::new(endpoint);
        cfg.model = std::env::var("GAR_MODEL").ok();
        cfg.api_key = std::env::var("GAR_API_KEY").ok();
        Ok(cfg)
    }
}

/// Pause between retry attempts. Injectable so tests assert the schedule
/// instead of sleeping through it.
pub trait Backoff: Send + Sync {
    fn wait(&self, delay: Duration);
}

struct ThreadSleep;

impl Backoff for ThreadSleep {
    fn wait(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

enum Attempt {
    Transient(AttemptError),
    Fatal(GatewayError),
}

/// Shareable across threads; no caller-visible mutable state.
pub struct Client {
    cfg: GatewayConfig,
    agent: ureq::Agent,
    backoff: Arc<dyn Backoff>,
}

impl Client {
    pub fn new(cfg: GatewayConfig) -> Self {
        Self::with_backoff(cfg, Arc::new(ThreadSleep))
    }

    pub fn with_backoff(cfg: GatewayConfig, backoff: Arc<dyn Backoff>) -> Self {
        let agent_cfg = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build();
        Self { cfg, agent: agent_cfg.into(), backoff }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// One generation, retried with exponential backoff (base doubling per
    /// attempt) on rate limits, server errors and transport failures.
    pub fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError> {
        let body = encode_request(req)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.try_once(&body, req) {
                Ok(generation) => return Ok(generation),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => {
                    if attempt >= self.cfg.max_attempts {
                        return Err(GatewayError::Unavailable { attempts: attempt, last: e });
                    }
                    self.backoff.wait(self.cfg.backoff_base * 2u32.pow(attempt - 1));
                }
            }
        }
    }

    fn try_once(&self, body: &str, req: &GenerationRequest) -> Result<Generation, Attempt> {
        let mut http_req = self
            .agent
            .post(&self.cfg.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            http_req = http_req.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = match http_req.send(body) {
            Ok(r) => r,
            Err(e) => return Err(Attempt::Transient(AttemptError::Transport(e.to_string()))),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {
                let text = response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| Attempt::Transient(AttemptError::Transport(e.to_string())))?;
                decode_response(&text, req).map_err(Attempt::Fatal)
            }
            429 => Err(Attempt::Transient(AttemptError::RateLimited)),
            500..=599 => Err(Attempt::Transient(AttemptError::Server(status))),
            other => Err(Attempt::Fatal(GatewayError::Protocol(format!(
                "unexpected status {other}"
            )))),
        }
    }

    /// Runs every request, at most `max_in_flight` outstanding at once, and
    /// returns results in request order. Per-item failures are positional;
    /// they never abort the rest of the batch.
    pub fn generate_batch(
        &self,
        reqs: &[GenerationRequest],
    ) -> Vec<Result<Generation, GatewayError>> {
        let n = reqs.len();
        if n == 0 {
            return Vec::new();
        }
        let workers = self.cfg.max_in_flight.max(1).min(n);
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        let mut out: Vec<Option<Result<Generation, GatewayError>>> =
            (0..n).map(|_| None).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || {
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        if tx.send((i, self.generate(&reqs[i]))).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for (i, result) in rx {
                out[i] = Some(result);
            }
        });
        out.into_iter().map(|slot| slot.expect("every index completes")).collect()
    }
}
