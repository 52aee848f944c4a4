use std::fmt;
use std::sync::{Arc, Mutex};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ErrorClass, Usage};

type Predicate = Arc<dyn Fn(&ChatRequest) -> bool + Send + Sync>;
type Responder = Arc<dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>;

/// Which requests a script entry answers.
#[derive(Clone)]
pub enum Matcher {
    Any,
    /// Request text (all messages) contains the substring.
    Contains(String),
    Custom(Predicate),
}

impl Matcher {
    pub fn custom(f: impl Fn(&ChatRequest) -> bool + Send + Sync + 'static) -> Self {
        Matcher::Custom(Arc::new(f))
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => req.text().contains(s.as_str()),
            Matcher::Custom(f) => f(req),
        }
    }
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Any => f.write_str("Any"),
            Matcher::Contains(s) => write!(f, "Contains({s:?})"),
            Matcher::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ScriptedReply {
    Text(String),
    Fail(ErrorClass),
}

struct Entry {
    matcher: Matcher,
    reply: ScriptedReply,
    consumed: bool,
}

/// Deterministic chat backend driven by an ordered script.
///
/// Each request consumes the first unconsumed entry whose matcher accepts
/// it. When no entry matches, the optional fallback responder answers;
/// without one the request fails with [`ErrorClass::ScriptedMiss`]. Every
/// request is recorded verbatim in the transcript.
#[derive(Default)]
pub struct MockChatBackend {
    entries: Mutex<Vec<Entry>>,
    fallback: Option<Responder>,
    transcript: Mutex<Vec<ChatRequest>>,
    skip_transcript: bool,
}

impl MockChatBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(self, matcher: Matcher, text: impl Into<String>) -> Self {
        self.push(matcher, ScriptedReply::Text(text.into()))
    }

    pub fn fail(self, matcher: Matcher, class: ErrorClass) -> Self {
        self.push(matcher, ScriptedReply::Fail(class))
    }

    fn push(self, matcher: Matcher, reply: ScriptedReply) -> Self {
        self.entries.lock().expect("mock poisoned").push(Entry {
            matcher,
            reply,
            consumed: false,
        });
        self
    }

    /// Answers every request the script does not cover.
    pub fn with_responder(
        mut self,
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Arc::new(f));
        self
    }

    /// Stops recording requests; useful for long runs where the transcript is not needed.
    pub fn without_transcript(mut self) -> Self {
        self.skip_transcript = true;
        self
    }

    pub fn transcript(&self) -> Vec<ChatRequest> {
        self.transcript.lock().expect("mock poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .lock()
            .expect("mock poisoned")
            .iter()
            .filter(|e| !e.consumed)
            .count()
    }
}

fn approx_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatBackend for MockChatBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if !self.skip_transcript {
            self.transcript
                .lock()
                .expect("mock poisoned")
                .push(request.clone());
        }
        let scripted = {
            let mut entries = self.entries.lock().expect("mock poisoned");
            entries
                .iter_mut()
                .find(|e| !e.consumed && e.matcher.matches(request))
                .map(|e| {
                    e.consumed = true;
                    e.reply.clone()
                })
        };
        let text = match scripted {
            Some(ScriptedReply::Text(t)) => t,
            Some(ScriptedReply::Fail(class)) => {
                return Err(BackendError::new(class, "scripted failure"))
            }
            None => match &self.fallback {
                Some(f) => f(request)?,
                None => {
                    return Err(BackendError::new(
                        ErrorClass::ScriptedMiss,
                        "no script entry matches request",
                    ))
                }
            },
        };
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: approx_tokens(&request.text()),
                completion_tokens: approx_tokens(&text),
            },
            content: text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::ChatMessage;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_output: 16,
            model_name: "mock".into(),
        }
    }

    #[test]
    fn any_matcher_replies() {
        let m = MockChatBackend::new().reply(Matcher::Any, "hello");
        assert_eq!(m.send(&req("x")).unwrap().content, "hello");
    }

    #[test]
    fn transcript_counts_calls_byte_exact() {
        let m = MockChatBackend::new().with_responder(|r| Ok(r.user_text().to_uppercase()));
        for t in ["a", "b\n c", "d"] {
            m.send(&req(t)).unwrap();
        }
        let tr = m.transcript();
        assert_eq!(tr.len(), 3);
        assert_eq!(tr[1].user_text(), "b\n c");
    }

    #[test]
    fn unmatched_is_scripted_miss() {
        let m = MockChatBackend::new().reply(Matcher::Contains("needle".into()), "found");
        assert_eq!(m.send(&req("hay")).unwrap_err().class, ErrorClass::ScriptedMiss);
        assert_eq!(m.send(&req("a needle")).unwrap().content, "found");
        // consumed
        assert_eq!(m.send(&req("a needle")).unwrap_err().class, ErrorClass::ScriptedMiss);
        assert_eq!(m.transcript().len(), 3);
    }

    #[test]
    fn entries_consumed_in_order_per_matcher() {
        let m = MockChatBackend::new()
            .reply(Matcher::Contains("gen".into()), "g1")
            .reply(Matcher::Contains("judge".into()), "j1")
            .reply(Matcher::Contains("gen".into()), "g2");
        assert_eq!(m.send(&req("judge")).unwrap().content, "j1");
        assert_eq!(m.send(&req("gen")).unwrap().content, "g1");
        assert_eq!(m.send(&req("gen")).unwrap().content, "g2");
        assert_eq!(m.remaining(), 0);
    }
}
