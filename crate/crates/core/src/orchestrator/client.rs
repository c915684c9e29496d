use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer token for the endpoint.
pub const TOKEN_ENV: &str = "CITYPIPE_API_TOKEN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("endpoint {endpoint} returned {status}: {body}")]
    Status { endpoint: String, status: u16, body: String },
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("request payload is {size} bytes, limit is {limit}")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ChatError> },
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ChatError::Transport { .. } => true,
            ChatError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    User,
    Assistant,
}

/// Base64-encoded image ready for a data URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub mime: String,
    pub base64: String,
}

impl ImagePayload {
    pub fn png(bytes: &[u8]) -> Self {
        Self {
            mime: "image/png".into(),
            base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime, self.base64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
    /// Always empty on assistant turns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImagePayload>,
}

impl ChatTurn {
    pub fn user(text: impl Into<String>, images: Vec<ImagePayload>) -> Self {
        Self { role: ChatRole::User, text: text.into(), images }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, text: text.into(), images: Vec::new() }
    }
}

pub trait ChatClient: Send + Sync {
    /// Sends the conversation and returns the assistant reply text.
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, ChatError>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, ChatError> {
        (**self).chat(turns)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, ChatError> {
        (**self).chat(turns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Server base URL, or the full `/v1/chat/completions` URL.
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_secs: u64,
    pub max_payload_bytes: usize,
    #[serde(skip)]
    pub token: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            model: "cityllava".into(),
            temperature: 0.0,
            max_tokens: 1024,
            max_attempts: 3,
            backoff_base_ms: 200,
            backoff_max_ms: 5_000,
            timeout_secs: 300,
            max_payload_bytes: 64 * 1024 * 1024,
            token: None,
        }
    }
}

impl EndpointConfig {
    pub fn completions_url(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// OpenAI-style chat-completions body.
pub fn request_body(cfg: &EndpointConfig, turns: &[ChatTurn]) -> Value {
    let messages: Vec<Value> = turns
        .iter()
        .map(|t| match t.role {
            ChatRole::Assistant => json!({"role": "assistant", "content": t.text}),
            ChatRole::User => {
                let mut parts = vec![json!({"type": "text", "text": t.text})];
                parts.extend(
                    t.images
                        .iter()
                        .map(|img| json!({"type": "image_url", "image_url": {"url": img.data_url()}})),
                );
                json!({"role": "user", "content": parts})
            }
        })
        .collect();
    json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "stream": false,
    })
}

/// Extracts `choices[0].message.content`.
pub fn parse_reply(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "missing choices[0].message.content".to_string())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(format!("unexpected content type: {other}")),
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or
/// `max_attempts` is reached.
pub fn with_retry<T>(
    cfg: &EndpointConfig,
    mut op: impl FnMut(u32) -> Result<T, ChatError>,
) -> Result<T, ChatError> {
    let max = cfg.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < max => {
                tracing::debug!(attempt, error = %e, "retrying chat request");
                thread::sleep(cfg.backoff(attempt));
                attempt += 1;
            }
            Err(e) if e.is_retryable() => {
                return Err(ChatError::RetriesExhausted { attempts: attempt, last: Box::new(e) })
            }
            Err(e) => return Err(e),
        }
    }
}

pub struct HttpChatClient {
    cfg: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ChatError::Transport { endpoint: cfg.completions_url(), message: e.to_string() })?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn send_once(&self, url: &str, body: &str) -> Result<String, ChatError> {
        let mut req = self
            .http
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = &self.cfg.token {
            req = req.bearer_auth(token);
        }
        let transport = |e: reqwest::Error| ChatError::Transport { endpoint: url.to_string(), message: e.to_string() };
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(ChatError::Status { endpoint: url.to_string(), status: status.as_u16(), body: text });
        }
        parse_reply(&text).map_err(|message| ChatError::Protocol { endpoint: url.to_string(), message })
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, ChatError> {
        let body = request_body(&self.cfg, turns).to_string();
        if body.len() > self.cfg.max_payload_bytes {
            return Err(ChatError::PayloadTooLarge { size: body.len(), limit: self.cfg.max_payload_bytes });
        }
        let url = self.cfg.completions_url();
        with_retry(&self.cfg, |_| self.send_once(&url, &body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_and_backoff() {
        let mut c = EndpointConfig::default();
        c.url = "http://h:1/".into();
        assert_eq!(c.completions_url(), "http://h:1/v1/chat/completions");
        c.url = "http://h:1/v1/chat/completions".into();
        assert_eq!(c.completions_url(), "http://h:1/v1/chat/completions");
        c.backoff_base_ms = 100;
        c.backoff_max_ms = 300;
        assert_eq!(c.backoff(1), Duration::from_millis(100));
        assert_eq!(c.backoff(2), Duration::from_millis(200));
        assert_eq!(c.backoff(3), Duration::from_millis(300));
    }

    #[test]
    fn body_shape() {
        let turns = [
            ChatTurn::user("q1", vec![ImagePayload::png(b"a"), ImagePayload::png(b"b")]),
            ChatTurn::assistant("a1"),
            ChatTurn::user("q2", vec![]),
        ];
        let body = request_body(&EndpointConfig::default(), &turns);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 1024);
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[0]["content"][1]["image_url"]["url"], "data:image/png;base64,YQ==");
        assert_eq!(msgs[0]["content"][2]["image_url"]["url"], "data:image/png;base64,Yg==");
        assert_eq!(msgs[1]["content"], "a1");
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap(), "hi");
        assert!(parse_reply("not json").is_err());
        assert!(parse_reply(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn retry_policy() {
        let cfg = EndpointConfig { backoff_base_ms: 0, ..Default::default() };
        let server_err = || ChatError::Status { endpoint: "e".into(), status: 500, body: String::new() };
        let mut calls = 0;
        let out = with_retry(&cfg, |_| {
            calls += 1;
            if calls < 3 { Err(server_err()) } else { Ok(calls) }
        });
        assert_eq!(out, Ok(3));

        let mut calls = 0;
        let out: Result<(), _> = with_retry(&cfg, |_| {
            calls += 1;
            Err(server_err())
        });
        assert!(matches!(out, Err(ChatError::RetriesExhausted { attempts: 3, .. })));

        let mut calls = 0;
        let out: Result<(), _> = with_retry(&cfg, |_| {
            calls += 1;
            Err(ChatError::Status { endpoint: "e".into(), status: 400, body: String::new() })
        });
        assert_eq!(calls, 1);
        assert!(matches!(out, Err(ChatError::Status { status: 400, .. })));
    }
}
