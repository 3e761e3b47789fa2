//! Chat-completion client with record/replay cassettes.
//!
//! Every model call goes through [`Llm::complete`]. In replay mode responses
//! come from a [`Cassette`] and no network is touched; in record mode the
//! backend is called and each exchange is appended to the cassette.

use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod cassette;
mod http;
mod prompt;

pub use cassette::{fingerprint, Cassette, CassetteEntry, CassetteMode};
pub use http::HttpBackend;
pub use prompt::{PromptBook, PromptContext, PromptKind};

/// Documented default model.
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        match self.messages.last() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                Err(LlmError::InvalidRequest("last message must come from the user".into()))
            }
            Some(_) => Ok(()),
        }
    }

    /// Continues this conversation: appends the assistant's `reply` and the
    /// messages of `next`, taking `next`'s model and temperature.
    pub fn follow_up(&self, reply: &ChatResponse, next: ChatRequest) -> ChatRequest {
        let mut messages = self.messages.clone();
        messages.push(ChatMessage::assistant(reply.content.clone()));
        messages.extend(next.messages);
        ChatRequest { model: next.model, temperature: next.temperature, messages }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage_tokens: u64,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse { content: content.into(), finish_reason: "stop".into(), usage_tokens: 0 }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no unconsumed cassette entry for request {fingerprint}")]
    CassetteMiss { fingerprint: String },

    #[error("HTTP error after {attempts} attempts: {message}")]
    Http { status: Option<u16>, message: String, attempts: u32 },

    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },

    #[error("invalid chat request: {0}")]
    InvalidRequest(String),

    #[error("cassette {path}: {message}")]
    CassetteIo { path: String, message: String },

    #[error("no LLM backend configured (set DIFFORACLE_API_KEY or use --replay)")]
    NoBackend,
}

impl LlmError {
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::CassetteMiss { .. } => "CassetteMiss",
            LlmError::Http { .. } => "HttpError",
            LlmError::RateLimited { .. } => "RateLimited",
            LlmError::InvalidRequest(_) => "InvalidRequest",
            LlmError::CassetteIo { .. } => "CassetteIo",
            LlmError::NoBackend => "NoBackend",
        }
    }
}

/// Failure of a single backend call, before retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: transport failures and 5xx.
    Transient {
        status: Option<u16>,
        message: String,
    },
    RateLimited,
    /// Not worth retrying: other 4xx, malformed bodies.
    Fatal {
        status: Option<u16>,
        message: String,
    },
}

/// A chat-completion provider.
pub trait Backend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(req)
    }
}

/// Backend answering from a closure; handy for scripted model behaviour.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync,
{
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (self.0)(req)
    }
}

/// Backend returning canned responses in order.
pub struct ScriptedBackend {
    responses: Mutex<std::collections::VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend { responses: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().expect("script lock").len()
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let next = self.responses.lock().expect("script lock").pop_front();
        next.map(ChatResponse::stop)
            .ok_or_else(|| BackendError::Fatal { status: None, message: "script exhausted".into() })
    }
}

/// Exponential backoff: `attempts` tries, waiting `base`, `2*base`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 5, base: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base * 2u32.saturating_pow(retry)
    }
}

/// The client handed to every pipeline stage.
pub struct Llm {
    backend: Option<Box<dyn Backend>>,
    cassette: Mutex<Cassette>,
    retry: RetryPolicy,
}

impl Llm {
    /// Answers only from `cassette`.
    pub fn replay(mut cassette: Cassette) -> Self {
        cassette.set_mode(CassetteMode::Replay);
        Llm { backend: None, cassette: Mutex::new(cassette), retry: RetryPolicy::default() }
    }

    /// Calls `backend` and appends every exchange to `cassette`.
    pub fn record(backend: impl Backend + 'static, mut cassette: Cassette) -> Self {
        cassette.set_mode(CassetteMode::Record);
        Llm { backend: Some(Box::new(backend)), cassette: Mutex::new(cassette), retry: RetryPolicy::default() }
    }

    /// Calls `backend` without recording.
    pub fn passthrough(backend: impl Backend + 'static) -> Self {
        Llm {
            backend: Some(Box::new(backend)),
            cassette: Mutex::new(Cassette::in_memory(CassetteMode::Passthrough)),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> CassetteMode {
        self.cassette().mode()
    }

    pub fn cassette(&self) -> MutexGuard<'_, Cassette> {
        self.cassette.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let fp = fingerprint(req);
        let mode = self.mode();
        if mode == CassetteMode::Replay {
            return self.cassette().take(&fp).ok_or(LlmError::CassetteMiss { fingerprint: fp });
        }
        let response = self.send_with_retry(req)?;
        if mode == CassetteMode::Record {
            self.cassette().append(CassetteEntry { fp, request: req.clone(), response: response.clone() })?;
        }
        Ok(response)
    }

    fn send_with_retry(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let backend = self.backend.as_ref().ok_or(LlmError::NoBackend)?;
        let mut last = BackendError::RateLimited;
        for attempt in 0..self.retry.attempts {
            if attempt > 0 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            match backend.send(req) {
                Ok(r) => return Ok(r),
                Err(BackendError::Fatal { status, message }) => {
                    return Err(LlmError::Http { status, message, attempts: attempt + 1 })
                }
                Err(e) => {
                    log::warn!("LLM call failed (attempt {}): {e:?}", attempt + 1);
                    last = e;
                }
            }
        }
        let attempts = self.retry.attempts;
        Err(match last {
            BackendError::RateLimited => LlmError::RateLimited { attempts },
            BackendError::Transient { status, message } | BackendError::Fatal { status, message } => {
                LlmError::Http { status, message, attempts }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn req(text: &str) -> ChatRequest {
        ChatRequest { model: DEFAULT_MODEL.into(), temperature: 1.0, messages: vec![ChatMessage::user(text)] }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { attempts: 5, base: Duration::from_millis(1) }
    }

    #[test]
    fn validates_requests() {
        assert!(req("hi").validate().is_ok());
        let mut r = req("hi");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        r.messages.push(ChatMessage::assistant("x"));
        assert!(r.validate().is_err());
        r.messages.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn record_twice_gives_two_entries_and_replays_in_order() {
        let llm = Llm::record(ScriptedBackend::new(["first", "second"]), Cassette::in_memory(CassetteMode::Record));
        assert_eq!(llm.complete(&req("q")).unwrap().content, "first");
        assert_eq!(llm.complete(&req("q")).unwrap().content, "second");
        let cassette = llm.cassette().clone();
        assert_eq!(cassette.len(), 2);

        let replay = Llm::replay(cassette);
        assert_eq!(replay.complete(&req("q")).unwrap().content, "first");
        assert_eq!(replay.complete(&req("q")).unwrap().content, "second");
        assert_eq!(replay.complete(&req("q")).unwrap_err().kind(), "CassetteMiss");
    }

    #[test]
    fn empty_cassette_misses() {
        let llm = Llm::replay(Cassette::in_memory(CassetteMode::Replay));
        assert!(matches!(llm.complete(&req("q")), Err(LlmError::CassetteMiss { .. })));
    }

    #[test]
    fn retries_transient_failures() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let backend = FnBackend(move |_: &ChatRequest| {
            if c.fetch_add(1, Ordering::SeqCst) < 3 {
                Err(BackendError::Transient { status: Some(503), message: "busy".into() })
            } else {
                Ok(ChatResponse::stop("ok"))
            }
        });
        let llm = Llm::passthrough(backend).with_retry(fast());
        assert_eq!(llm.complete(&req("q")).unwrap().content, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert_eq!(llm.cassette().len(), 0);
    }

    #[test]
    fn surfaces_rate_limit_after_exhaustion() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let llm = Llm::passthrough(FnBackend(move |_: &ChatRequest| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::RateLimited)
        }))
        .with_retry(fast());
        assert!(matches!(llm.complete(&req("q")), Err(LlmError::RateLimited { attempts: 5 })));
        assert_eq!(calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = calls.clone();
        let llm = Llm::passthrough(FnBackend(move |_: &ChatRequest| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::Fatal { status: Some(401), message: "bad key".into() })
        }))
        .with_retry(fast());
        let err = llm.complete(&req("q")).unwrap_err();
        assert!(matches!(err, LlmError::Http { status: Some(401), attempts: 1, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        let delays: Vec<u64> = (0..4).map(|i| p.delay(i).as_secs()).collect();
        assert_eq!(delays, [1, 2, 4, 8]);
    }

    #[test]
    fn follow_up_keeps_history() {
        let first = req("does it have bugs?");
        let next = first.follow_up(&ChatResponse::stop("yes"), req("write a test"));
        let roles: Vec<Role> = next.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant, Role::User]);
        assert!(next.validate().is_ok());
    }
}
