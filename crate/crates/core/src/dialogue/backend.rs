//! Chat backend contract, retry policy and the HTTP client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_answer_tokens: u32,
    /// Total number of turns K, counting the initial answer.
    pub turn_budget: usize,
}

impl DecodingConfig {
    /// Instruction-following families.
    pub fn conservative() -> Self {
        Self { temperature: 0.2, top_p: 0.9, max_answer_tokens: 256, turn_budget: 20 }
    }

    /// Reasoning-oriented families.
    pub fn reasoning() -> Self {
        Self { temperature: 0.6, top_p: 0.95, ..Self::conservative() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(crate::Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(crate::Error::Config(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.max_answer_tokens == 0 {
            return Err(crate::Error::Config("max_answer_tokens must be positive".into()));
        }
        if self.turn_budget < 1 {
            return Err(crate::Error::Config("turn_budget must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self::conservative()
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub decoding: DecodingConfig,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatReply {
    pub text: String,
    /// One entry per reply token when requested and supported.
    pub logprobs: Option<Vec<f64>>,
    /// Hidden instability value, only produced by the simulator.
    pub latent: Option<f64>,
}

/// Side information about the initial answer A^1 that a backend can supply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialAnnotation {
    pub latent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timeout")]
    Timeout,
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;

    fn initial_annotation(&self) -> InitialAnnotation {
        InitialAnnotation::default()
    }
}

/// Checks the message-list shape: non-empty, at most one leading system
/// message, then strictly alternating user/assistant turns starting and
/// ending with a user message.
pub fn validate_messages(messages: &[Message]) -> Result<(), BackendError> {
    let body = match messages.first() {
        None => return Err(BackendError::InvalidRequest("empty message list".into())),
        Some(m) if m.role == Role::System => &messages[1..],
        Some(_) => messages,
    };
    if body.is_empty() {
        return Err(BackendError::InvalidRequest("no user message".into()));
    }
    for (i, m) in body.iter().enumerate() {
        let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if m.role != want {
            return Err(BackendError::InvalidRequest(format!(
                "message {i} has role {:?}, expected {:?}",
                m.role, want
            )));
        }
    }
    if body.len() % 2 == 0 {
        return Err(BackendError::InvalidRequest("last message must be from the user".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500, factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(attempt as i32);
        Duration::from_millis(ms as u64)
    }

    /// Runs `op` up to `max_attempts` times, sleeping with exponential
    /// backoff between failures. Invalid requests are not retried.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e @ BackendError::InvalidRequest(_)) => return Err(e),
                Err(e) => last = Some(e),
            }
            if attempt + 1 < attempts {
                std::thread::sleep(self.delay(attempt));
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "SPIKESCORE_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

/// Client for chat-completion endpoints that take a `messages` array and
/// answer with `choices[0].message.content`.
pub struct HttpChatBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_answer_tokens,
        });
        if request.logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }
}

/// Extracts reply text and optional token log-probabilities.
pub fn parse_chat_response(v: &Value) -> Result<ChatReply, BackendError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing message.content".into()))?
        .to_string();
    let logprobs = match choice.pointer("/logprobs/content") {
        None | Some(Value::Null) => None,
        Some(Value::Array(tokens)) => Some(
            tokens
                .iter()
                .map(|t| {
                    t.get("logprob")
                        .and_then(Value::as_f64)
                        .ok_or_else(|| BackendError::Malformed("token without logprob".into()))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(BackendError::Malformed("logprobs.content is not an array".into())),
    };
    Ok(ChatReply { text, logprobs, latent: None })
}

fn map_ureq_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        validate_messages(&request.messages)?;
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.request_body(request)).map_err(map_ureq_error)?;
        let code = resp.status().as_u16();
        if code >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status { code, body });
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        parse_chat_response(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_shape() {
        assert!(validate_messages(&[]).is_err());
        assert!(validate_messages(&[Message::user("q")]).is_ok());
        assert!(validate_messages(&[Message::system("s"), Message::user("q")]).is_ok());
        assert!(validate_messages(&[Message::user("q"), Message::assistant("a")]).is_err());
        assert!(validate_messages(&[Message::user("q"), Message::user("q")]).is_err());
        assert!(validate_messages(&[
            Message::user("q"),
            Message::assistant("a"),
            Message::user("p")
        ])
        .is_ok());
    }

    #[test]
    fn parse_with_logprobs() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "hi there"},
            "logprobs": {"content": [{"token": "hi", "logprob": -0.5}, {"token": " there", "logprob": -1.25}]}}]});
        let r = parse_chat_response(&v).unwrap();
        assert_eq!(r.text, "hi there");
        assert_eq!(r.logprobs, Some(vec![-0.5, -1.25]));
    }

    #[test]
    fn parse_malformed() {
        assert!(matches!(parse_chat_response(&json!({})), Err(BackendError::Malformed(_))));
        assert!(matches!(
            parse_chat_response(&json!({"choices": [{"message": {}}]})),
            Err(BackendError::Malformed(_))
        ));
    }

    #[test]
    fn retry_gives_up_after_max_attempts() {
        let policy = RetryPolicy { max_attempts: 3, base_delay_ms: 0, factor: 2.0 };
        let mut calls = 0;
        let r: Result<(), _> = policy.run(|| {
            calls += 1;
            Err(BackendError::Timeout)
        });
        assert_eq!(r, Err(BackendError::Timeout));
        assert_eq!(calls, 3);

        let mut calls = 0;
        let r = policy.run(|| {
            calls += 1;
            if calls < 2 { Err(BackendError::Timeout) } else { Ok(7) }
        });
        assert_eq!(r, Ok(7));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn decoding_defaults() {
        let d = DecodingConfig::default();
        assert_eq!((d.temperature, d.top_p, d.turn_budget, d.max_answer_tokens), (0.2, 0.9, 20, 256));
        let r = DecodingConfig::reasoning();
        assert_eq!((r.temperature, r.top_p), (0.6, 0.95));
    }
}
