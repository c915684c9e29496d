//! Deterministic test doubles: an in-process [`ScriptedChat`] client and a
//! minimal HTTP/1.1 [`MockServer`] speaking the chat-completions protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use super::client::{ChatClient, ChatError, ChatRole, ChatTurn, ImagePayload};

type Responder = dyn Fn(&[ChatTurn]) -> Result<String, ChatError> + Send + Sync;

/// Answers each conversation with a pure function of its turns and keeps a
/// transcript of every request.
pub struct ScriptedChat {
    responder: Box<Responder>,
    transcripts: Mutex<Vec<Vec<ChatTurn>>>,
}

impl ScriptedChat {
    pub fn new(f: impl Fn(&[ChatTurn]) -> Result<String, ChatError> + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(f), transcripts: Mutex::new(Vec::new()) }
    }

    pub fn echo(reply: &str) -> Self {
        let reply = reply.to_string();
        Self::new(move |_| Ok(reply.clone()))
    }

    pub fn transcripts(&self) -> Vec<Vec<ChatTurn>> {
        self.transcripts.lock().expect("transcript lock").clone()
    }
}

impl ChatClient for ScriptedChat {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, ChatError> {
        self.transcripts.lock().expect("transcript lock").push(turns.to_vec());
        (self.responder)(turns)
    }
}

/// Recovers chat turns from a chat-completions request body.
pub fn parse_request_turns(body: &Value) -> Result<Vec<ChatTurn>, String> {
    let messages = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or("missing messages array")?;
    messages
        .iter()
        .map(|m| {
            let role = match m.get("role").and_then(Value::as_str) {
                Some("user") => ChatRole::User,
                Some("assistant") => ChatRole::Assistant,
                other => return Err(format!("unsupported role {other:?}")),
            };
            let mut text = String::new();
            let mut images = Vec::new();
            match m.get("content") {
                Some(Value::String(s)) => text.push_str(s),
                Some(Value::Array(parts)) => {
                    for p in parts {
                        if let Some(t) = p.get("text").and_then(Value::as_str) {
                            text.push_str(t);
                        }
                        if let Some(url) = p.pointer("/image_url/url").and_then(Value::as_str) {
                            let rest = url.strip_prefix("data:").ok_or("image url is not a data url")?;
                            let (mime, b64) = rest.split_once(";base64,").ok_or("image url lacks base64 data")?;
                            images.push(ImagePayload { mime: mime.into(), base64: b64.into() });
                        }
                    }
                }
                _ => return Err("missing content".into()),
            }
            Ok(ChatTurn { role, text, images })
        })
        .collect()
}

pub fn completion_body(text: &str) -> String {
    json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    })
    .to_string()
}

#[derive(Debug, Clone)]
pub struct MockRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn ok(text: &str) -> Self {
        Self { status: 200, body: completion_body(text) }
    }
}

type HttpResponder = dyn Fn(&MockRequest, usize) -> MockResponse + Send + Sync;

/// HTTP server on 127.0.0.1 for tests. The responder receives each request
/// together with its zero-based arrival number.
pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<MockRequest>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(responder: impl Fn(&MockRequest, usize) -> MockResponse + Send + Sync + 'static) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests: Arc<Mutex<Vec<MockRequest>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let responder: Arc<HttpResponder> = Arc::new(responder);
        let handle = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let requests = Arc::clone(&requests);
                    let responder = Arc::clone(&responder);
                    thread::spawn(move || {
                        let _ = serve(stream, &requests, responder.as_ref());
                    });
                }
            })
        };
        Ok(Self { addr, requests, stop, handle: Some(handle) })
    }

    /// Serves chat completions from a pure function of the conversation.
    pub fn chat(f: impl Fn(&[ChatTurn]) -> String + Send + Sync + 'static) -> std::io::Result<Self> {
        Self::start(move |req, _| {
            let turns = serde_json::from_str::<Value>(&req.body)
                .map_err(|e| e.to_string())
                .and_then(|v| parse_request_turns(&v));
            match turns {
                Ok(turns) => MockResponse::ok(&f(&turns)),
                Err(e) => MockResponse { status: 400, body: json!({"error": e}).to_string() },
            }
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<MockRequest>>, responder: &HttpResponder) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.parse().unwrap_or(0),
                "authorization" => authorization = Some(value.to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request = MockRequest { path, authorization, body: String::from_utf8_lossy(&body).into_owned() };
    let seq = {
        let mut log = log.lock().expect("request log");
        log.push(request.clone());
        log.len() - 1
    };
    let response = responder(&request, seq);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    )?;
    stream.flush()
}
