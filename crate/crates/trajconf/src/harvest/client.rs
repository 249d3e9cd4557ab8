//! OpenAI-compatible completion requests with top-k log-probabilities.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Which endpoint flavour to call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Api {
    /// `POST {endpoint}/completions` with `logprobs: k`.
    Completions,
    /// `POST {endpoint}/chat/completions` with `logprobs: true, top_logprobs: k`.
    Chat,
}

/// One generated completion with per-token alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub top_logprobs: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub enum RequestError {
    /// Worth retrying: transport failures, 429 and 5xx.
    Transient(String),
    /// Not worth retrying, but only this trace is lost.
    Rejected(String),
    /// The endpoint cannot serve this toolkit at all.
    Fatal(String),
}

pub struct Client {
    agent: ureq::Agent,
    url: String,
    api: Api,
    api_key: Option<String>,
}

pub struct RequestParams<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub top_k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Client {
    pub fn new(endpoint: &str, api: Api, api_key: Option<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = match api {
            Api::Completions => format!("{base}/completions"),
            Api::Chat => format!("{base}/chat/completions"),
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url,
            api,
            api_key,
        }
    }

    pub fn request_body(&self, p: &RequestParams) -> Value {
        match self.api {
            Api::Completions => json!({
                "model": p.model,
                "prompt": p.prompt,
                "max_tokens": p.max_tokens,
                "temperature": p.temperature,
                "logprobs": p.top_k,
                "n": 1,
            }),
            Api::Chat => json!({
                "model": p.model,
                "messages": [{"role": "user", "content": p.prompt}],
                "max_tokens": p.max_tokens,
                "temperature": p.temperature,
                "logprobs": true,
                "top_logprobs": p.top_k,
                "n": 1,
            }),
        }
    }

    pub fn complete(&self, p: &RequestParams) -> Result<Completion, RequestError> {
        let body = serde_json::to_string(&self.request_body(p)).expect("request serializes");
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| RequestError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| RequestError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(RequestError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(RequestError::Rejected(format!("HTTP {status}: {}", snippet(&text))));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| RequestError::Transient(format!("malformed response: {e}")))?;
        parse_response(self.api, &value)
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

fn missing_logprobs() -> RequestError {
    RequestError::Fatal(
        "endpoint returned no log-probabilities; it must support top-k logprobs".into(),
    )
}

/// Extracts text and per-token top-k log-probabilities from a response body.
pub fn parse_response(api: Api, value: &Value) -> Result<Completion, RequestError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| RequestError::Rejected("response has no choices".into()))?;
    let logprobs = choice.get("logprobs").filter(|v| !v.is_null());
    match api {
        Api::Completions => {
            let text = choice.get("text").and_then(Value::as_str).unwrap_or_default().to_owned();
            let tops = logprobs
                .and_then(|l| l.get("top_logprobs"))
                .and_then(Value::as_array)
                .ok_or_else(missing_logprobs)?;
            let top_logprobs = tops
                .iter()
                .map(|t| match t {
                    Value::Object(m) => m.values().filter_map(Value::as_f64).collect(),
                    _ => Vec::new(),
                })
                .collect();
            Ok(Completion { text, top_logprobs })
        }
        Api::Chat => {
            let text = choice
                .get("message")
                .and_then(|m| m.get("content"))
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_owned();
            let content = logprobs
                .and_then(|l| l.get("content"))
                .and_then(Value::as_array)
                .ok_or_else(missing_logprobs)?;
            let top_logprobs = content
                .iter()
                .map(|tok| {
                    tok.get("top_logprobs")
                        .and_then(Value::as_array)
                        .map(|alts| {
                            alts.iter()
                                .filter_map(|a| a.get("logprob").and_then(Value::as_f64))
                                .collect()
                        })
                        .unwrap_or_default()
                })
                .collect();
            Ok(Completion { text, top_logprobs })
        }
    }
}
