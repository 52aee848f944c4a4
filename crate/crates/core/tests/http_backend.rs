use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use codeinstruct::embedding::{Embedder, EmbeddingClient, HttpEmbedder};
use codeinstruct::hermetic::{StubHttpServer, StubResponse};
use codeinstruct::llm_backend::{
    ChatBackend, ChatClient, ChatMessage, ChatRequest, ErrorClass, HttpChatBackend, InFlightLimiter, RetryPolicy,
};

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts,
        base_delay_ms: 5,
        multiplier: 2.0,
        jitter_fraction: 0.0,
        ..RetryPolicy::default()
    }
}

fn request() -> ChatRequest {
    ChatRequest {
        messages: vec![ChatMessage::system("be brief"), ChatMessage::user("say hi")],
        temperature: 0.2,
        max_output: 32,
        model_name: "gpt-4".into(),
    }
}

fn ok_body(content: &str) -> serde_json::Value {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    })
}

#[test]
fn rate_limited_then_ok_is_retried_with_bearer_auth() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = StubHttpServer::start(move |_| {
        if h.fetch_add(1, Ordering::SeqCst) == 0 {
            StubResponse::json(429, &json!({"error": "slow down"}))
        } else {
            StubResponse::json(200, &ok_body("hi"))
        }
    })
    .unwrap();
    let backend = HttpChatBackend::with_key(&server.url("/v1/chat/completions"), "sk-test", 5.0).unwrap();
    let client = ChatClient::new(Arc::new(backend), fast_retry(3), InFlightLimiter::new(2));
    let done = client.complete(&request()).unwrap();
    assert_eq!(done.content, "hi");
    assert_eq!(done.attempts, 2);
    assert_eq!(done.usage.prompt_tokens, 11);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    for r in &reqs {
        assert_eq!(r.method, "POST");
        assert_eq!(r.path, "/v1/chat/completions");
        assert_eq!(r.header("authorization"), Some("Bearer sk-test"));
        let body = r.json();
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "say hi");
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["max_tokens"], 32);
    }
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubHttpServer::start(|_| StubResponse::json(400, &json!({"error": "bad"}))).unwrap();
    let backend = HttpChatBackend::with_key(&server.url("/chat"), "k", 5.0).unwrap();
    let client = ChatClient::unbounded(Arc::new(backend), fast_retry(4));
    let err = client.complete(&request()).unwrap_err();
    assert_eq!(err.class, ErrorClass::Client);
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn server_errors_exhaust_attempts() {
    let server = StubHttpServer::start(|_| StubResponse::raw(503, "unavailable")).unwrap();
    let backend = HttpChatBackend::with_key(&server.url("/chat"), "k", 5.0).unwrap();
    let client = ChatClient::unbounded(Arc::new(backend), fast_retry(3));
    let err = client.complete(&request()).unwrap_err();
    assert_eq!(err.class, ErrorClass::ServerError);
    assert_eq!(err.attempts, 3);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn malformed_bodies_and_timeouts_are_classified() {
    let server = StubHttpServer::start(|r| {
        if r.path == "/slow" {
            StubResponse::json(200, &ok_body("late")).delayed(Duration::from_millis(1500))
        } else if r.path == "/garbage" {
            StubResponse::raw(200, "not json")
        } else {
            StubResponse::json(200, &json!({"choices": []}))
        }
    })
    .unwrap();
    let send = |path: &str, timeout: f64| {
        HttpChatBackend::with_key(&server.url(path), "k", timeout)
            .unwrap()
            .send(&request())
            .unwrap_err()
            .class
    };
    assert_eq!(send("/garbage", 5.0), ErrorClass::Protocol);
    assert_eq!(send("/empty", 5.0), ErrorClass::Protocol);
    assert_eq!(send("/slow", 0.3), ErrorClass::Timeout);
}

#[test]
fn unreachable_endpoint_is_a_connection_error() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend = HttpChatBackend::with_key(&format!("http://127.0.0.1:{port}/chat"), "k", 2.0).unwrap();
    assert_eq!(backend.send(&request()).unwrap_err().class, ErrorClass::Connection);
}

#[test]
fn embeddings_wire_shape_and_chunking() {
    let server = StubHttpServer::start(|r| {
        let inputs = r.json()["input"].as_array().cloned().unwrap_or_default();
        // answer out of order; the client must reorder by index
        let data: Vec<_> = inputs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f64, 1.0]}))
            .collect();
        StubResponse::json(200, &json!({"data": data, "model": "gte-large"}))
    })
    .unwrap();
    let embedder = HttpEmbedder::with_key(&server.url("/v1/embeddings"), "gte-large", "sk-e", 5.0).unwrap();
    assert_eq!(embedder.model_tag(), "gte-large");
    let client = EmbeddingClient::new(Arc::new(embedder), 2, fast_retry(2));
    let texts: Vec<String> = ["a", "bb", "ccc", "dddd", "eeeee"].iter().map(|s| s.to_string()).collect();
    let vectors = client.embed_batch(&texts).unwrap();
    let firsts: Vec<f32> = vectors.iter().map(|v| v.values()[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    for r in &reqs {
        assert_eq!(r.header("authorization"), Some("Bearer sk-e"));
        assert_eq!(r.json()["model"], "gte-large");
    }
    let mut sizes: Vec<usize> = reqs.iter().map(|r| r.json()["input"].as_array().unwrap().len()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![1, 2, 2]);
}
