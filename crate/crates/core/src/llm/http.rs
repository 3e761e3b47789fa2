use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// OpenAI-compatible `POST {base}/chat/completions`.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(180)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { base_url: base_url.into(), api_key: api_key.into(), agent }
    }

    /// Reads `DIFFORACLE_API_KEY`, and `DIFFORACLE_BASE_URL` unless
    /// `base_url` is given.
    pub fn from_env(base_url: Option<String>) -> Option<Self> {
        let key = std::env::var("DIFFORACLE_API_KEY").ok().filter(|k| !k.is_empty())?;
        let base = base_url
            .or_else(|| std::env::var("DIFFORACLE_BASE_URL").ok())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        Some(HttpBackend::new(base, key))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub(crate) fn parse_completion(body: &Value) -> Result<ChatResponse, BackendError> {
    let fatal = |m: &str| BackendError::Fatal { status: None, message: m.to_string() };
    let choice = body.get("choices").and_then(|c| c.get(0)).ok_or_else(|| fatal("response has no choices"))?;
    let content = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or_default().to_string();
    let finish_reason = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("stop").to_string();
    if content.is_empty() && finish_reason == "stop" {
        return Err(fatal("empty content with finish_reason=stop"));
    }
    let usage_tokens = body.pointer("/usage/total_tokens").and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse { content, finish_reason, usage_tokens })
}

impl Backend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = json!({
            "model": req.model,
            "temperature": req.temperature,
            "messages": req.messages,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| BackendError::Transient { status: None, message: e.to_string() })?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(BackendError::RateLimited);
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient { status: Some(status), message: e.to_string() })?;
        if status >= 500 {
            return Err(BackendError::Transient { status: Some(status), message: text });
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Fatal { status: Some(status), message: text });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal { status: Some(status), message: format!("bad JSON body: {e}") })?;
        parse_completion(&value)
    }
}
