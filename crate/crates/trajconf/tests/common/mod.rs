//! In-process stand-in for an OpenAI-compatible endpoint.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

pub struct Request {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

impl Request {
    /// The prompt text for either API flavour.
    pub fn prompt(&self) -> String {
        self.body
            .get("prompt")
            .or_else(|| self.body.pointer("/messages/0/content"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned()
    }

    pub fn top_k(&self) -> usize {
        let k = self.body.get("top_logprobs").or_else(|| self.body.get("logprobs"));
        k.and_then(Value::as_u64).unwrap_or(0) as usize
    }
}

pub type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

pub struct MockServer {
    pub url: String,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let h = handler.clone();
                thread::spawn(move || serve(stream, &*h));
            }
        });
        Self {
            url: format!("http://{addr}/v1"),
            stop,
            addr,
            handle: Some(handle),
        }
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

fn serve(stream: TcpStream, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_owned();
    let mut length = 0;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => length = v.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(v.trim().to_owned()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let req = Request {
        path,
        authorization,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let (status, text) = handler(&req);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.flush();
}

/// Valid top-k log-probabilities for `tokens` decoding steps; the leading
/// alternative's probability varies with the step so trajectories differ.
pub fn logprob_rows(tokens: usize, k: usize, salt: usize) -> Vec<Vec<f64>> {
    (0..tokens)
        .map(|t| {
            let lead = 0.35 + 0.6 * (((t * 7 + salt * 3) % 10) as f64 / 10.0);
            let rest = (1.0 - lead) / k as f64;
            let mut row = vec![lead.ln()];
            row.extend((1..k).map(|j| (rest * (1.0 - 0.01 * j as f64)).ln()));
            row
        })
        .collect()
}

/// A completions-API body with the given text and rows.
pub fn completions_body(text: &str, rows: &[Vec<f64>]) -> String {
    let tops: Vec<Value> = rows
        .iter()
        .map(|r| {
            let m: serde_json::Map<String, Value> =
                r.iter().enumerate().map(|(i, lp)| (format!("tok{i}"), json!(lp))).collect();
            Value::Object(m)
        })
        .collect();
    json!({"choices": [{"text": text, "logprobs": {"top_logprobs": tops}}]}).to_string()
}

/// A chat-API body with the given text and rows.
pub fn chat_body(text: &str, rows: &[Vec<f64>]) -> String {
    let content: Vec<Value> = rows
        .iter()
        .map(|r| {
            let alts: Vec<Value> = r
                .iter()
                .enumerate()
                .map(|(i, lp)| json!({"token": format!("tok{i}"), "logprob": lp}))
                .collect();
            json!({"token": "tok0", "logprob": r[0], "top_logprobs": alts})
        })
        .collect();
    json!({"choices": [{"message": {"role": "assistant", "content": text}, "logprobs": {"content": content}}]})
        .to_string()
}

/// Writes a questions file: `q0` has answer 4, `q1` answer 9, ...
pub fn write_questions(path: &std::path::Path, n: usize) {
    let mut s = String::new();
    for i in 0..n {
        let q = json!({"question_id": format!("q{i}"), "prompt": format!("What is {i}+4? #{i}"), "ground_truth": (i + 4).to_string()});
        s.push_str(&q.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Answers `q<i>` prompts correctly on even request counts and wrongly on
/// odd ones.
pub fn answering_handler(k_cap: usize, chat: bool) -> impl Fn(&Request) -> (u16, String) + Send + Sync {
    let counter = std::sync::atomic::AtomicUsize::new(0);
    move |req: &Request| {
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let prompt = req.prompt();
        let i: usize = prompt.rsplit('#').next().and_then(|s| s.parse().ok()).unwrap_or(0);
        let answer = if n % 2 == 0 { i + 4 } else { i + 5 };
        let text = format!("Let me think.\nSo the result is \\boxed{{{answer}}}.");
        let rows = logprob_rows(6 + n % 5, req.top_k().min(k_cap), n);
        let body = if chat { chat_body(&text, &rows) } else { completions_body(&text, &rows) };
        (200, body)
    }
}
