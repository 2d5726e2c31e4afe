//! Chat-completion gateway: providers, retries, concurrency cap, logging.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 3000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for ChatRequest {
    fn default() -> Self {
        Self {
            messages: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: String::new(),
        }
    }
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            ..Self::default()
        }
    }

    pub fn system(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::System,
            content: content.into(),
        });
        self
    }

    pub fn user(mut self, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::User,
            content: content.into(),
        });
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("request has no user message".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined by newlines.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// How a single provider attempt failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderFailure {
    #[error("transient: {0}")]
    Transient(String),
    #[error("credential rejected: {0}")]
    Auth(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("{provider}: credential rejected: {message}")]
    Auth { provider: String, message: String },
    #[error("{provider}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        provider: String,
        attempts: u32,
        last: String,
    },
    #[error("{provider}: {message}")]
    Fatal { provider: String, message: String },
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// JSONL request/response log.
#[derive(Debug)]
pub struct RequestLog {
    file: Mutex<File>,
    redact: bool,
}

impl RequestLog {
    pub fn open(path: &Path, redact: bool) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
            redact,
        })
    }

    fn record(
        &self,
        provider: &str,
        req: &ChatRequest,
        attempt: u32,
        elapsed: Duration,
        result: &Result<String, ProviderFailure>,
    ) {
        let content = |s: &str| -> serde_json::Value {
            if self.redact {
                json!({"redacted": true, "chars": s.chars().count()})
            } else {
                json!(s)
            }
        };
        let messages: Vec<_> = req
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": content(&m.content)}))
            .collect();
        let (status, body) = match result {
            Ok(text) => ("ok", content(text)),
            Err(ProviderFailure::Transient(e)) => ("transient", json!(e)),
            Err(ProviderFailure::Auth(_)) => ("auth", json!("credential rejected")),
            Err(ProviderFailure::Fatal(e)) => ("fatal", json!(e)),
        };
        let line = json!({
            "ts": chrono::Utc::now().to_rfc3339(),
            "provider": provider,
            "model": req.model_id,
            "attempt": attempt,
            "elapsed_ms": elapsed.as_millis() as u64,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": messages,
            "status": status,
            "response": body,
        });
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("request log write failed: {e}");
        }
    }
}

/// Thread-safe client over one provider.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    limiter: Semaphore,
    log: Option<RequestLog>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            limiter: Semaphore::new(DEFAULT_MAX_IN_FLIGHT),
            log: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let provider = self.provider.id().to_owned();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.provider.complete(req)
            };
            if let Some(log) = &self.log {
                log.record(&provider, req, attempt, started.elapsed(), &result);
            }
            match result {
                Ok(text) => return Ok(text),
                Err(ProviderFailure::Auth(message)) => return Err(GatewayError::Auth { provider, message }),
                Err(ProviderFailure::Fatal(message)) => return Err(GatewayError::Fatal { provider, message }),
                Err(ProviderFailure::Transient(last)) => {
                    if attempt > self.retry.max_retries {
                        return Err(GatewayError::Exhausted {
                            provider,
                            attempts: attempt,
                            last,
                        });
                    }
                    log::debug!("{provider}: transient failure ({last}), retry {attempt}");
                    std::thread::sleep(self.retry.delay(attempt - 1));
                }
            }
        }
    }
}

/// Removes a surrounding markdown code fence, if the text is one.
pub fn strip_fences(text: &str) -> String {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        let body = body.trim_end();
        let body = body.strip_suffix("```").unwrap_or(body);
        return body.trim_end().to_owned() + "\n";
    }
    t.to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure {
        error: MockFailureKind,
        #[serde(default)]
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFailureKind {
    Transient,
    Auth,
    Fatal,
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        Self::Text(s.into())
    }

    pub fn transient() -> Self {
        Self::Failure {
            error: MockFailureKind::Transient,
            message: "scripted transient failure".into(),
        }
    }

    fn into_result(self) -> Result<String, ProviderFailure> {
        match self {
            Self::Text(t) => Ok(t),
            Self::Failure { error, message } => Err(match error {
                MockFailureKind::Transient => ProviderFailure::Transient(message),
                MockFailureKind::Auth => ProviderFailure::Auth(message),
                MockFailureKind::Fatal => ProviderFailure::Fatal(message),
            }),
        }
    }
}

/// JSON script for [`MockProvider`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<MockRuleSpec>,
    pub queue: Vec<MockReply>,
    pub fallback: Option<MockReply>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRuleSpec {
    pub pattern: String,
    pub replies: Vec<MockReply>,
}

struct MockRule {
    pattern: Regex,
    replies: VecDeque<MockReply>,
}

#[derive(Default)]
struct MockState {
    rules: Vec<MockRule>,
    queue: VecDeque<MockReply>,
    requests: Vec<ChatRequest>,
}

/// Scripted provider. Each request is matched against the rules in order
/// (regex over the full transcript); a matching rule yields its next reply
/// and repeats its last one once drained. Unmatched requests take the next
/// queued reply, then the fallback.
#[derive(Default)]
pub struct MockProvider {
    state: Mutex<MockState>,
    fallback: Option<MockReply>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: MockScript) -> Result<Self, regex::Error> {
        let mut m = Self::new();
        for r in script.rules {
            m = m.rule(&r.pattern, r.replies)?;
        }
        m.fallback = script.fallback;
        m.state.get_mut().unwrap().queue.extend(script.queue);
        Ok(m)
    }

    pub fn queued<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        let m = Self::new();
        m.push_many(replies.into_iter().map(|s| MockReply::Text(s.into())));
        m
    }

    pub fn rule(mut self, pattern: &str, replies: Vec<MockReply>) -> Result<Self, regex::Error> {
        let pattern = Regex::new(pattern)?;
        self.state.get_mut().unwrap().rules.push(MockRule {
            pattern,
            replies: replies.into(),
        });
        Ok(self)
    }

    pub fn with_fallback(mut self, reply: MockReply) -> Self {
        self.fallback = Some(reply);
        self
    }

    pub fn push(&self, reply: MockReply) {
        self.lock().queue.push_back(reply);
    }

    pub fn push_many(&self, replies: impl IntoIterator<Item = MockReply>) {
        self.lock().queue.extend(replies);
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.lock().requests.clone()
    }

    pub fn request_count(&self) -> usize {
        self.lock().requests.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ChatProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        let mut st = self.lock();
        st.requests.push(req.clone());
        let transcript = req.transcript();
        let from_rule = st
            .rules
            .iter_mut()
            .find(|r| r.pattern.is_match(&transcript))
            .and_then(|r| {
                if r.replies.len() > 1 {
                    r.replies.pop_front()
                } else {
                    r.replies.front().cloned()
                }
            });
        let reply = from_rule
            .or_else(|| st.queue.pop_front())
            .or_else(|| self.fallback.clone())
            .unwrap_or_else(|| MockReply::Failure {
                error: MockFailureKind::Fatal,
                message: "mock script exhausted".into(),
            });
        reply.into_result()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProfile {
    pub id: String,
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding the bearer credential.
    pub api_key_env: Option<String>,
    pub headers: Vec<(String, String)>,
    pub timeout_secs: u64,
}

impl Default for HttpProfile {
    fn default() -> Self {
        Self {
            id: "http".into(),
            endpoint: "https://openrouter.ai/api/v1".into(),
            model_id: String::new(),
            api_key_env: Some("OPENROUTER_API_KEY".into()),
            headers: Vec::new(),
            timeout_secs: 120,
        }
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpProvider {
    profile: HttpProfile,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(profile: HttpProfile) -> Result<Self, GatewayError> {
        let api_key = match &profile.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::Auth {
                provider: profile.id.clone(),
                message: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Fatal {
                provider: profile.id.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            profile,
            api_key,
            client,
        })
    }
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.profile.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        let model = if req.model_id.is_empty() {
            &self.profile.model_id
        } else {
            &req.model_id
        };
        let body = json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let url = format!("{}/chat/completions", self.profile.endpoint.trim_end_matches('/'));
        let mut rb = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        for (k, v) in &self.profile.headers {
            rb = rb.header(k, v);
        }
        let resp = rb
            .send()
            .map_err(|e| ProviderFailure::Transient(e.without_url().to_string()))?;
        let status = resp.status();
        if status == 401 || status == 403 {
            return Err(ProviderFailure::Auth(format!("HTTP {status}")));
        }
        if status == 429 || status.is_server_error() {
            return Err(ProviderFailure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderFailure::Fatal(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| ProviderFailure::Fatal(e.without_url().to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderFailure::Fatal("response has no choices[0].message.content".into()))
    }
}
