//! Completion gateway: a live chat-completion client and a scripted mock
//! behind one trait.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-16k";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const API_KEY_ENV: &str = "GP_API_KEY";
pub const API_BASE_ENV: &str = "GP_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub video_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
    /// Identifies the (video, query) pair; used by the mock for lookup.
    pub tag: Option<RequestTag>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_name: DEFAULT_MODEL.to_string(),
            tag: None,
        }
    }

    pub fn with_tag(mut self, video_id: impl Into<String>, query: impl Into<String>) -> Self {
        self.tag = Some(RequestTag {
            video_id: video_id.into(),
            query: query.into(),
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub latency_ms: u64,
    pub provider: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("authentication rejected: {0}")]
    AuthError(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("provider rejected prompt length: {0}")]
    ContextOverflow(String),
    #[error("no scripted response for {0:?}")]
    MockMiss(Option<RequestTag>),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Short name used when a failure is logged as a collapse.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::AuthError(_) => "AuthError",
            GatewayError::RateLimited { .. } => "RateLimited",
            GatewayError::TransportError(_) => "TransportError",
            GatewayError::ContextOverflow(_) => "ContextOverflow",
            GatewayError::MockMiss(_) => "MockMiss",
            GatewayError::InvalidRequest(_) => "InvalidRequest",
        }
    }
}

pub trait Gateway: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError>;
}

impl<G: Gateway + ?Sized> Gateway for &G {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: Gateway + ?Sized> Gateway for Box<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        (**self).complete(request)
    }
}

fn check_request(request: &CompletionRequest) -> Result<(), GatewayError> {
    if request.prompt.trim().is_empty() {
        return Err(GatewayError::InvalidRequest("empty prompt".into()));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(GatewayError::InvalidRequest(
            "temperature must be >= 0".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mock

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub video_id: String,
    pub query: String,
    pub response: String,
}

/// Canned responses keyed by (video id, query), with an optional fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default)]
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn from_json_str(input: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(input)
    }
}

#[derive(Debug, Clone)]
pub struct MockGateway {
    table: HashMap<RequestTag, String>,
    default: Option<String>,
}

impl MockGateway {
    /// Later entries for the same key override earlier ones.
    pub fn new(script: MockScript) -> Self {
        let table = script
            .entries
            .into_iter()
            .map(|e| {
                (
                    RequestTag {
                        video_id: e.video_id,
                        query: e.query,
                    },
                    e.response,
                )
            })
            .collect();
        Self {
            table,
            default: script.default,
        }
    }
}

impl Gateway for MockGateway {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        check_request(request)?;
        let hit = request.tag.as_ref().and_then(|t| self.table.get(t));
        let text = hit
            .or(self.default.as_ref())
            .ok_or_else(|| GatewayError::MockMiss(request.tag.clone()))?;
        Ok(CompletionResult {
            text: text.trim().to_string(),
            latency_ms: 0,
            provider: "mock".into(),
            attempts: 1,
        })
    }
}

// ---------------------------------------------------------------------------
// live client

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Something that can POST a JSON body. A failure here means no HTTP
/// response was received at all.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<HttpReply, String>;
}

/// Transport backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(300))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<HttpReply, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(failed_attempt.saturating_sub(1))
    }
}

enum AttemptError {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

/// Chat-completion client: POST `{api_base}/chat/completions` with a single
/// user message and read the first choice's content.
pub struct HttpGateway<T: Transport> {
    transport: T,
    api_base: String,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpGateway<UreqTransport> {
    /// Reads the key from `GP_API_KEY` and the base URL from `GP_API_BASE`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::AuthError(format!("{API_KEY_ENV} is not set")))?;
        let base = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Ok(Self::new(UreqTransport::default(), base, key))
    }
}

impl<T: Transport> HttpGateway<T> {
    pub fn new(transport: T, api_base: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            transport,
            api_base: api_base.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<String, AttemptError> {
        use AttemptError::*;
        let reply = self
            .transport
            .post_json(url, &self.api_key, body)
            .map_err(|e| Retryable(GatewayError::TransportError(e)))?;
        match reply.status {
            200..=299 => extract_content(&reply.body).ok_or_else(|| {
                Fatal(GatewayError::TransportError(format!(
                    "response has no choices[0].message.content: {}",
                    excerpt(&reply.body)
                )))
            }),
            401 | 403 => Err(Fatal(GatewayError::AuthError(excerpt(&reply.body)))),
            429 => Err(Retryable(GatewayError::RateLimited { attempts: 0 })),
            400 | 413 if mentions_context_length(&reply.body) => {
                Err(Fatal(GatewayError::ContextOverflow(excerpt(&reply.body))))
            }
            500..=599 => Err(Retryable(GatewayError::TransportError(format!(
                "HTTP {}: {}",
                reply.status,
                excerpt(&reply.body)
            )))),
            s => Err(Fatal(GatewayError::TransportError(format!(
                "HTTP {s}: {}",
                excerpt(&reply.body)
            )))),
        }
    }
}

fn excerpt(s: &str) -> String {
    s.chars().take(300).collect()
}

fn mentions_context_length(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length")
        || lower.contains("context length")
        || lower.contains("maximum context")
}

fn extract_content(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    v.pointer("/choices/0/message/content")?
        .as_str()
        .map(str::to_string)
}

impl<T: Transport> Gateway for HttpGateway<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        check_request(request)?;
        let url = format!("{}/chat/completions", self.api_base);
        let body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&url, &body) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text: text.trim().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        provider: self.api_base.clone(),
                        attempts: attempt,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(e)) => {
                    if attempt >= max_attempts {
                        return Err(match e {
                            GatewayError::RateLimited { .. } => {
                                GatewayError::RateLimited { attempts: attempt }
                            }
                            other => other,
                        });
                    }
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.retry.delay_after(attempt));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// concurrency cap

/// Counting semaphore.
struct Gate {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.gate.freed.notify_one();
    }
}

/// Wraps a gateway so that at most `limit` calls are in flight at once.
pub struct Bounded<G> {
    inner: G,
    gate: Gate,
}

impl<G: Gateway> Bounded<G> {
    pub fn new(inner: G, limit: usize) -> Self {
        Self {
            inner,
            gate: Gate::new(limit),
        }
    }
}

impl<G: Gateway> Gateway for Bounded<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let _permit = self.gate.acquire();
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    const EXAMPLE_OUTPUT: &str = r#"{"summary": "The video discusses...", "comment": "These captions describe a scene where people talk in a show, but provide limited information to understand the video.", "query": "Habit 2: Build other people up", "before 179": "Talk about...", "between 179 and 329": "Talk about...", "after 329": "Talk about...", "answer": [179, 329]}"#;

    #[test]
    fn mock_default_entry() {
        let mock = MockGateway::new(MockScript {
            default: Some(EXAMPLE_OUTPUT.into()),
            entries: vec![],
        });
        let r = mock.complete(&CompletionRequest::new("prompt")).unwrap();
        assert_eq!(r.text, EXAMPLE_OUTPUT);
        assert_eq!(r.provider, "mock");
    }

    #[test]
    fn mock_keyed_lookup_and_miss() {
        let script = MockScript::from_json_str(
            r#"{"entries":[{"video_id":"v","query":"q","response":"  hit  "}]}"#,
        )
        .unwrap();
        let mock = MockGateway::new(script);
        let hit = mock
            .complete(&CompletionRequest::new("p").with_tag("v", "q"))
            .unwrap();
        assert_eq!(hit.text, "hit");
        let miss = mock.complete(&CompletionRequest::new("p").with_tag("v", "other"));
        assert!(matches!(miss, Err(GatewayError::MockMiss(_))));
        assert!(matches!(
            mock.complete(&CompletionRequest::new("p")),
            Err(GatewayError::MockMiss(None))
        ));
    }

    #[test]
    fn mock_is_referentially_transparent() {
        let mock = MockGateway::new(MockScript {
            default: Some("x".into()),
            entries: vec![],
        });
        let req = CompletionRequest::new("p").with_tag("a", "b");
        assert_eq!(mock.complete(&req), mock.complete(&req));
    }

    #[test]
    fn rejects_empty_prompt_and_negative_temperature() {
        let mock = MockGateway::new(MockScript {
            default: Some("x".into()),
            entries: vec![],
        });
        assert!(matches!(
            mock.complete(&CompletionRequest::new("  ")),
            Err(GatewayError::InvalidRequest(_))
        ));
        let mut req = CompletionRequest::new("p");
        req.temperature = -1.0;
        assert!(matches!(
            mock.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    /// Replays a fixed list of replies and records what it was sent.
    struct ScriptedTransport {
        replies: Mutex<Vec<Result<HttpReply, String>>>,
        calls: AtomicUsize,
        last_body: Mutex<Option<Value>>,
    }

    impl ScriptedTransport {
        fn new(mut replies: Vec<Result<HttpReply, String>>) -> Self {
            replies.reverse();
            Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                last_body: Mutex::new(None),
            }
        }
    }

    impl Transport for ScriptedTransport {
        fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<HttpReply, String> {
            assert_eq!(url, "http://fake/v1/chat/completions");
            assert_eq!(bearer, "key");
            self.calls.fetch_add(1, Ordering::SeqCst);
            *self.last_body.lock().unwrap() = Some(body.clone());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .expect("no more scripted replies")
        }
    }

    fn ok(content: &str) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                .to_string(),
        })
    }

    fn status(code: u16, body: &str) -> Result<HttpReply, String> {
        Ok(HttpReply {
            status: code,
            body: body.into(),
        })
    }

    fn gateway(replies: Vec<Result<HttpReply, String>>) -> HttpGateway<ScriptedTransport> {
        HttpGateway::new(ScriptedTransport::new(replies), "http://fake/v1/", "key").with_retry(
            RetryPolicy {
                max_attempts: 3,
                base_delay: Duration::ZERO,
            },
        )
    }

    #[test]
    fn retries_rate_limit_then_succeeds() {
        let gw = gateway(vec![
            status(429, ""),
            status(429, ""),
            ok(" {\"answer\": [1, 2]}\n"),
        ]);
        let r = gw.complete(&CompletionRequest::new("prompt")).unwrap();
        assert_eq!(r.attempts, 3);
        assert_eq!(r.text, "{\"answer\": [1, 2]}");
        assert_eq!(gw.transport.calls.load(Ordering::SeqCst), 3);
        let body = gw.transport.last_body.lock().unwrap().clone().unwrap();
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "prompt");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], DEFAULT_MODEL);
    }

    #[test]
    fn rate_limit_exhausts() {
        let gw = gateway(vec![status(429, ""), status(429, ""), status(429, "")]);
        assert_eq!(
            gw.complete(&CompletionRequest::new("p")),
            Err(GatewayError::RateLimited { attempts: 3 })
        );
    }

    #[test]
    fn transport_failures_retry_then_error() {
        let gw = gateway(vec![
            Err("reset".into()),
            status(503, "busy"),
            Err("reset again".into()),
        ]);
        assert!(matches!(
            gw.complete(&CompletionRequest::new("p")),
            Err(GatewayError::TransportError(_))
        ));
        assert_eq!(gw.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn no_retry_on_malformed_content() {
        let gw = gateway(vec![ok("I cannot determine the answer.")]);
        let r = gw.complete(&CompletionRequest::new("p")).unwrap();
        assert_eq!(r.attempts, 1);
        assert_eq!(r.text, "I cannot determine the answer.");
    }

    #[test]
    fn fatal_statuses() {
        assert!(matches!(
            gateway(vec![status(401, "bad key")]).complete(&CompletionRequest::new("p")),
            Err(GatewayError::AuthError(_))
        ));
        assert!(matches!(
            gateway(vec![status(
                400,
                r#"{"error":{"code":"context_length_exceeded"}}"#
            )])
            .complete(&CompletionRequest::new("p")),
            Err(GatewayError::ContextOverflow(_))
        ));
        assert!(matches!(
            gateway(vec![status(404, "nope")]).complete(&CompletionRequest::new("p")),
            Err(GatewayError::TransportError(_))
        ));
        assert!(matches!(
            gateway(vec![status(200, "not json")]).complete(&CompletionRequest::new("p")),
            Err(GatewayError::TransportError(_))
        ));
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(2));
        assert_eq!(p.delay_after(3), Duration::from_secs(4));
    }

    /// Tracks the peak number of overlapping calls.
    struct CountingGateway {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Gateway for CountingGateway {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(CompletionResult {
                text: String::new(),
                latency_ms: 5,
                provider: "count".into(),
                attempts: 1,
            })
        }
    }

    #[test]
    fn bounded_caps_in_flight_calls() {
        let counting = CountingGateway {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let bounded = Arc::new(Bounded::new(counting, 3));
        std::thread::scope(|s| {
            for _ in 0..12 {
                let b = Arc::clone(&bounded);
                s.spawn(move || {
                    for _ in 0..4 {
                        b.complete(&CompletionRequest::new("p")).unwrap();
                    }
                });
            }
        });
        let peak = bounded.inner.peak.load(Ordering::SeqCst);
        assert!(peak <= 3, "peak {peak}");
        assert!(peak >= 2, "calls never overlapped");
    }
}
