use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ErrorClass, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> f64 {
    120.0
}

/// Client for the common chat-completions wire shape.
pub struct HttpChatBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn from_config(cfg: &HttpChatConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            BackendError::new(
                ErrorClass::Config,
                format!("credential env var {} is not set", cfg.api_key_env),
            )
        })?;
        Self::with_key(&cfg.endpoint, api_key, cfg.timeout_secs)
    }

    pub fn with_key(
        endpoint: &str,
        api_key: impl Into<String>,
        timeout_secs: f64,
    ) -> Result<Self, BackendError> {
        Ok(HttpChatBackend {
            endpoint: endpoint.to_string(),
            api_key: api_key.into(),
            client: build_client(timeout_secs)?,
        })
    }
}

pub(crate) fn build_client(timeout_secs: f64) -> Result<reqwest::blocking::Client, BackendError> {
    if !(timeout_secs > 0.0) {
        return Err(BackendError::new(ErrorClass::Config, "timeout must be > 0"));
    }
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_secs))
        .build()
        .map_err(|e| BackendError::new(ErrorClass::Config, e.to_string()))
}

/// POSTs `body` with a bearer token and returns the parsed JSON response,
/// mapping transport and status failures onto error classes.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    api_key: &str,
    body: &Value,
) -> Result<Value, BackendError> {
    let resp = client
        .post(endpoint)
        .bearer_auth(api_key)
        .json(body)
        .send()
        .map_err(classify_transport)?;
    let status = resp.status();
    let text = resp.text().map_err(classify_transport)?;
    if !status.is_success() {
        let class = match status.as_u16() {
            429 => ErrorClass::RateLimited,
            408 => ErrorClass::Timeout,
            s if s >= 500 => ErrorClass::ServerError,
            _ => ErrorClass::Client,
        };
        let snippet: String = text.chars().take(200).collect();
        return Err(BackendError::new(class, format!("HTTP {status}: {snippet}")));
    }
    serde_json::from_str(&text)
        .map_err(|e| BackendError::new(ErrorClass::Protocol, format!("invalid JSON body: {e}")))
}

fn classify_transport(e: reqwest::Error) -> BackendError {
    let class = if e.is_timeout() {
        ErrorClass::Timeout
    } else if e.is_connect() {
        ErrorClass::Connection
    } else if e.is_decode() || e.is_body() {
        ErrorClass::Protocol
    } else {
        ErrorClass::Connection
    };
    BackendError::new(class, e.to_string())
}

pub(crate) fn chat_body(request: &ChatRequest) -> Value {
    json!({
        "model": request.model_name,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output,
    })
}

pub(crate) fn parse_chat_response(v: &Value) -> Result<ChatResponse, BackendError> {
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            BackendError::new(
                ErrorClass::Protocol,
                "response lacks choices[0].message.content",
            )
        })?;
    let usage = Usage {
        prompt_tokens: v
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(ChatResponse {
        content: content.to_string(),
        usage,
    })
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let v = post_json(&self.client, &self.endpoint, &self.api_key, &chat_body(request))?;
        parse_chat_response(&v)
    }
}
