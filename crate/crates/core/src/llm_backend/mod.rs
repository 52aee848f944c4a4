//! Chat-completion client abstraction.
//!
//! A [`ChatBackend`] performs exactly one attempt. [`ChatClient`] layers the
//! retry policy and the global in-flight bound on top, so the same retry
//! behaviour applies to the HTTP backend and to the scripted mock.

pub(crate) mod http;
mod mock;
mod retry;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::{HttpChatBackend, HttpChatConfig};
pub use mock::{Matcher, MockChatBackend, ScriptedReply};
pub use retry::{retry_call, InFlightLimiter, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    RateLimited,
    ServerError,
    Timeout,
    /// Could not reach the endpoint at all.
    Connection,
    /// Non-retryable HTTP status (4xx other than 429).
    Client,
    /// Response body did not have the expected shape.
    Protocol,
    /// Missing credential or unusable configuration.
    Config,
    /// Mock backend had no script entry for the request.
    ScriptedMiss,
}

impl ErrorClass {
    pub fn default_retryable() -> BTreeSet<ErrorClass> {
        [
            ErrorClass::RateLimited,
            ErrorClass::ServerError,
            ErrorClass::Timeout,
            ErrorClass::Connection,
        ]
        .into_iter()
        .collect()
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorClass::RateLimited => "rate_limited",
            ErrorClass::ServerError => "server_error",
            ErrorClass::Timeout => "timeout",
            ErrorClass::Connection => "connection",
            ErrorClass::Client => "client",
            ErrorClass::Protocol => "protocol",
            ErrorClass::Config => "config",
            ErrorClass::ScriptedMiss => "scripted_miss",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{class} error after {attempts} attempt(s): {message}")]
pub struct BackendError {
    pub class: ErrorClass,
    pub message: String,
    pub attempts: u32,
}

impl BackendError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        BackendError {
            class,
            message: message.into(),
            attempts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output: u32,
    pub model_name: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::new(ErrorClass::Config, m));
        match self.messages.last() {
            None => bad("chat request has no messages"),
            Some(m) if m.role != Role::User => bad("last chat message must have role user"),
            _ if !(self.temperature >= 0.0) => bad("temperature must be >= 0"),
            _ => Ok(()),
        }
    }

    /// All message contents joined by newlines; what mock matchers see.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
}

/// A single-attempt chat backend.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub usage: Usage,
    pub attempts: u32,
}

/// Shareable client: backend + retry policy + in-flight bound.
#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, limiter: InFlightLimiter) -> Self {
        ChatClient {
            backend,
            retry,
            limiter,
        }
    }

    /// Client with no effective concurrency bound; convenient for tests.
    pub fn unbounded(backend: Arc<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        Self::new(backend, retry, InFlightLimiter::new(usize::MAX))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let (resp, attempts) =
            retry_call(&self.retry, &self.limiter, || self.backend.send(request))?;
        Ok(Completion {
            content: resp.content,
            usage: resp.usage,
            attempts,
        })
    }
}
