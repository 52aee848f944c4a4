//! Minimal blocking HTTP/1.1 server for exercising the HTTP clients offline.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::SyntheticResponder;
use crate::embedding::HashEmbedder;
use crate::llm_backend::{ChatMessage, ChatRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    /// Header names are lower-cased.
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers.iter().find(|(k, _)| *k == name).map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
    /// Sleep before answering, to provoke client timeouts.
    pub delay: Duration,
}

impl StubResponse {
    pub fn json(status: u16, body: &Value) -> Self {
        StubResponse {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn raw(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Handler = dyn Fn(&RecordedRequest) -> StubResponse + Send + Sync;

/// Serves each connection on its own thread and records every request.
/// Stops accepting when dropped.
pub struct StubHttpServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    accept_loop: Option<JoinHandle<()>>,
}

impl StubHttpServer {
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&RecordedRequest) -> StubResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let accept_loop = {
            let requests = requests.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let requests = requests.clone();
                            let handler = handler.clone();
                            std::thread::spawn(move || {
                                let _ = serve(stream, &requests, handler.as_ref());
                            });
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(StubHttpServer {
            addr,
            requests,
            stop,
            accept_loop: Some(accept_loop),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for StubHttpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_loop.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<RecordedRequest>>, handler: &Handler) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let k = k.trim().to_ascii_lowercase();
            let v = v.trim().to_string();
            if k == "content-length" {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let request = RecordedRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    log.lock().expect("request log").push(request.clone());
    let resp = handler(&request);
    if !resp.delay.is_zero() {
        std::thread::sleep(resp.delay);
    }
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        resp.status,
        resp.body.len(),
        resp.body
    )?;
    out.flush()
}

/// Handler speaking the chat-completions and embeddings shapes: chat
/// requests are answered by `responder`, embedding requests by a
/// [`HashEmbedder`] of dimension `dim`.
pub fn openai_compatible_handler(
    responder: SyntheticResponder,
    dim: usize,
) -> impl Fn(&RecordedRequest) -> StubResponse + Send + Sync + 'static {
    let embedder = HashEmbedder::new("stub-embedding", dim);
    move |req| {
        let body = req.json();
        if req.path.ends_with("/embeddings") {
            let Some(inputs) = body.get("input").and_then(Value::as_array) else {
                return StubResponse::json(400, &json!({"error": "input must be a list"}));
            };
            let data: Vec<Value> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"index": i, "embedding": embedder.vector_for(t.as_str().unwrap_or(""))}))
                .collect();
            return StubResponse::json(200, &json!({"data": data}));
        }
        let messages: Vec<ChatMessage> = match serde_json::from_value(body["messages"].clone()) {
            Ok(m) => m,
            Err(e) => return StubResponse::json(400, &json!({"error": e.to_string()})),
        };
        let request = ChatRequest {
            messages,
            temperature: body["temperature"].as_f64().unwrap_or(0.0),
            max_output: body["max_tokens"].as_u64().unwrap_or(0) as u32,
            model_name: body["model"].as_str().unwrap_or("").to_string(),
        };
        match responder.respond(&request) {
            Ok(content) => StubResponse::json(
                200,
                &json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
                    "usage": {"prompt_tokens": request.text().len() / 4, "completion_tokens": content.len() / 4},
                }),
            ),
            Err(e) => StubResponse::json(400, &json!({"error": e.message})),
        }
    }
}
