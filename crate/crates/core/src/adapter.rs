//! Client for an external language model speaking the hosted
//! chat-completion wire format.
//!
//! One HTTP request per decision: `POST {endpoint}/chat/completions` with a
//! JSON body carrying `model`, `temperature` and the ordered `messages`.
//! The reply text is taken from `choices[0].message.content`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const TOKEN_ENV_VAR: &str = "TEAMSIM_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no endpoint configured")]
    NotConfigured,
}

/// Anything that turns an ordered list of role-tagged messages into text.
pub trait ModelAdapter: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, AdapterError>;

    /// Cheap reachability check made before a run that depends on the model.
    fn probe(&self) -> Result<(), AdapterError> {
        self.complete(&[ChatMessage::user("Reply with {}")]).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSettings {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
}

impl AdapterSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            token_env: TOKEN_ENV_VAR.into(),
            timeout_secs: 60,
        }
    }

    pub fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> ChatRequest {
        ChatRequest { model: self.model.clone(), temperature: self.temperature, messages: messages.to_vec() }
    }
}

pub struct HttpAdapter {
    settings: AdapterSettings,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpAdapter {
    /// Reads the bearer token from the environment variable named in the
    /// settings; a missing variable means unauthenticated requests.
    pub fn new(settings: AdapterSettings) -> Self {
        let token = std::env::var(&settings.token_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { settings, token, agent }
    }

    pub fn settings(&self) -> &AdapterSettings {
        &self.settings
    }
}

impl ModelAdapter for HttpAdapter {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, AdapterError> {
        let body = self.settings.request_body(messages);
        let mut req = self.agent.post(&self.settings.completions_url());
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| AdapterError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| AdapterError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(AdapterError::Status { status, body: text });
        }
        parse_completion(&text)
    }
}

/// Pulls the assistant text out of a chat-completion response body.
pub fn parse_completion(body: &str) -> Result<String, AdapterError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| AdapterError::Malformed(e.to_string()))?;
    resp.choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| AdapterError::Malformed("no choices".into()))
}

/// Finds the first JSON object in model output, tolerating code fences and
/// surrounding prose.
pub fn extract_json_object(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let bytes = trimmed.as_bytes();
    let mut start = 0;
    while let Some(off) = trimmed[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v @ Value::Object(_)) = serde_json::from_str(&trimmed[open..=i]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}
