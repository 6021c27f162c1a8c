use super::{CompletionRequest, KnowledgeSource};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result, SourceError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// A chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_chat_path")]
    pub path: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay. Doubles on each subsequent retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Forward the request temperature. When off the field is omitted.
    #[serde(default = "default_true")]
    pub pass_temperature: bool,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_chat_path() -> String {
    "/v1/chat/completions".into()
}
fn default_embed_path() -> String {
    "/v1/embeddings".into()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_true() -> bool {
    true
}
fn default_max_in_flight() -> usize {
    8
}

impl ChatEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: None,
            path: default_chat_path(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            pass_temperature: true,
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(&self.base_url, self.timeout_ms, self.max_in_flight)
    }

    fn transport(&self) -> Transport {
        Transport::new(
            join_url(&self.base_url, &self.path),
            self.auth_env.clone(),
            self.timeout_ms,
            self.retries,
            self.backoff_ms,
            self.max_in_flight,
        )
    }
}

/// An OpenAI-style embeddings endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub dimension: usize,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_embed_path")]
    pub path: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl EmbeddingEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Config("embedding dimension must be > 0".into()));
        }
        validate_common(&self.base_url, self.timeout_ms, self.max_in_flight)
    }
}

fn validate_common(base_url: &str, timeout_ms: u64, max_in_flight: usize) -> Result<()> {
    if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
        return Err(Error::Config(format!("base_url {base_url:?} must be http(s)")));
    }
    if timeout_ms == 0 {
        return Err(Error::Config("timeout_ms must be > 0".into()));
    }
    if max_in_flight == 0 {
        return Err(Error::Config("max_in_flight must be > 0".into()));
    }
    Ok(())
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
struct Transport {
    url: String,
    auth_env: Option<String>,
    retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
    gate: Gate,
}

impl Transport {
    fn new(
        url: String,
        auth_env: Option<String>,
        timeout_ms: u64,
        retries: u32,
        backoff_ms: u64,
        max_in_flight: usize,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url,
            auth_env,
            retries,
            backoff: Duration::from_millis(backoff_ms),
            agent,
            gate: Gate::new(max_in_flight.max(1)),
        }
    }

    /// POSTs `body` and returns the parsed JSON reply. Retries 5xx and
    /// timeouts up to `retries` times with doubling delay.
    fn post(&self, body: &Value) -> Result<Value, SourceError> {
        let _permit = self.gate.acquire();
        let token = self.auth_env.as_deref().and_then(|k| std::env::var(k).ok());
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            let outcome = self.post_once(body, token.as_deref());
            let retryable = matches!(&outcome, Err(SourceError::Timeout))
                || matches!(&outcome, Err(SourceError::HttpStatus(c)) if *c >= 500);
            if !retryable || attempt >= self.retries {
                return outcome;
            }
            tracing::debug!(url = %self.url, attempt, ?outcome, "retrying request");
            std::thread::sleep(delay);
            delay = delay.saturating_mul(2);
            attempt += 1;
        }
    }

    fn post_once(&self, body: &Value, token: Option<&str>) -> Result<Value, SourceError> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(SourceError::HttpStatus(status));
        }
        let text = resp.body_mut().read_to_string().map_err(map_ureq)?;
        serde_json::from_str(&text).map_err(|e| SourceError::MalformedResponse(format!("invalid JSON: {e}")))
    }
}

fn map_ureq(e: ureq::Error) -> SourceError {
    match e {
        ureq::Error::Timeout(_) => SourceError::Timeout,
        ureq::Error::StatusCode(c) => SourceError::HttpStatus(c),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => SourceError::Timeout,
        other => SourceError::Transport(other.to_string()),
    }
}

/// A [`KnowledgeSource`] speaking the chat-completions wire format.
#[derive(Debug)]
pub struct HttpChatSource {
    role: String,
    config: ChatEndpointConfig,
    transport: Transport,
    cost_weight: f64,
}

impl HttpChatSource {
    pub fn new(role: impl Into<String>, config: ChatEndpointConfig) -> Result<Self> {
        config.validate()?;
        let transport = config.transport();
        Ok(Self { role: role.into(), config, transport, cost_weight: 1.0 })
    }

    pub fn with_cost_weight(mut self, w: f64) -> Self {
        self.cost_weight = w;
        self
    }

    pub fn config(&self) -> &ChatEndpointConfig {
        &self.config
    }

    fn request_body(&self, prompt: &str, temperature: f64) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if self.config.pass_temperature {
            body["temperature"] = json!(temperature);
        }
        body
    }
}

impl KnowledgeSource for HttpChatSource {
    fn complete(&self, request: &CompletionRequest) -> Result<String, SourceError> {
        let reply = self.transport.post(&self.request_body(&request.prompt, request.temperature))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| SourceError::MalformedResponse("missing choices[0].message.content".into()))
    }

    fn role(&self) -> &str {
        &self.role
    }

    fn cost_weight(&self) -> f64 {
        self.cost_weight
    }
}

/// An [`Embedder`] backed by an embeddings endpoint. Vectors are
/// re-normalized to unit length.
#[derive(Debug)]
pub struct HttpEmbedder {
    config: EmbeddingEndpointConfig,
    transport: Transport,
}

impl HttpEmbedder {
    pub fn new(config: EmbeddingEndpointConfig) -> Result<Self> {
        config.validate()?;
        let transport = Transport::new(
            join_url(&config.base_url, &config.path),
            config.auth_env.clone(),
            config.timeout_ms,
            config.retries,
            config.backoff_ms,
            config.max_in_flight,
        );
        Ok(Self { config, transport })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let reply = self.transport.post(&json!({"model": self.config.model, "input": text}))?;
        let raw = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| SourceError::MalformedResponse("missing data[0].embedding".into()))?;
        let values = raw
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| SourceError::MalformedResponse("non-numeric embedding".into())))
            .collect::<Result<Vec<f64>, SourceError>>()?;
        if values.len() != self.config.dimension {
            return Err(Error::DimensionMismatch { expected: self.config.dimension, actual: values.len() });
        }
        EmbeddingVector::normalized(values)
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn provider_id(&self) -> String {
        format!("http/{}/d{}", self.config.model, self.config.dimension)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned replies in order on a local port; repeats the last one.
    /// The handler receives the request body and returns (status, body).
    fn stub<F>(handler: F) -> (String, Arc<AtomicUsize>)
    where
        F: Fn(usize, &str) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).ok();
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, reply) = handler(n, &String::from_utf8_lossy(&body));
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                );
                stream.write_all(head.as_bytes()).ok();
                stream.write_all(reply.as_bytes()).ok();
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn chat_reply(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn config(url: &str, retries: u32) -> ChatEndpointConfig {
        ChatEndpointConfig { retries, backoff_ms: 5, timeout_ms: 5_000, ..ChatEndpointConfig::new(url, "stub-model") }
    }

    #[test]
    fn echoes_through_stub() {
        let (url, _) = stub(|_, body| {
            let v: Value = serde_json::from_str(body).unwrap();
            assert_eq!(v["model"], "stub-model");
            assert_eq!(v["messages"][0]["role"], "user");
            assert_eq!(v["temperature"], 0.7);
            (200, chat_reply(v["messages"][0]["content"].as_str().unwrap()))
        });
        let s = HttpChatSource::new("actor", config(&url, 0)).unwrap();
        assert_eq!(s.complete(&CompletionRequest::new("hello there", 0.7, "t")).unwrap(), "hello there");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits) = stub(|n, _| if n < 2 { (500, "{}".into()) } else { (200, chat_reply("ok")) });
        let s = HttpChatSource::new("actor", config(&url, 2)).unwrap();
        assert_eq!(s.complete(&CompletionRequest::new("p", 0.2, "t")).unwrap(), "ok");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_report_status() {
        let (url, hits) = stub(|_, _| (503, "{}".into()));
        let s = HttpChatSource::new("actor", config(&url, 1)).unwrap();
        assert_eq!(s.complete(&CompletionRequest::new("p", 0.2, "t")), Err(SourceError::HttpStatus(503)));
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = stub(|_, _| (404, "{}".into()));
        let s = HttpChatSource::new("actor", config(&url, 3)).unwrap();
        assert_eq!(s.complete(&CompletionRequest::new("p", 0.2, "t")), Err(SourceError::HttpStatus(404)));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn invalid_json_is_malformed() {
        let (url, _) = stub(|_, _| (200, "this is not json".into()));
        let s = HttpChatSource::new("actor", config(&url, 0)).unwrap();
        assert!(matches!(s.complete(&CompletionRequest::new("p", 0.2, "t")), Err(SourceError::MalformedResponse(_))));
    }

    #[test]
    fn missing_content_is_malformed() {
        let (url, _) = stub(|_, _| (200, "{\"choices\": []}".into()));
        let s = HttpChatSource::new("actor", config(&url, 0)).unwrap();
        assert!(matches!(s.complete(&CompletionRequest::new("p", 0.2, "t")), Err(SourceError::MalformedResponse(_))));
    }

    #[test]
    fn embedder_normalizes_and_checks_dimension() {
        let (url, _) = stub(|_, _| (200, json!({"data": [{"embedding": [3.0, 4.0]}]}).to_string()));
        let cfg = EmbeddingEndpointConfig {
            base_url: url.clone(),
            model: "e".into(),
            dimension: 2,
            auth_env: None,
            path: default_embed_path(),
            timeout_ms: 5_000,
            retries: 0,
            backoff_ms: 1,
            max_in_flight: 2,
        };
        let e = HttpEmbedder::new(cfg.clone()).unwrap();
        assert_eq!(e.embed("x").unwrap().as_slice(), &[0.6, 0.8]);
        let e = HttpEmbedder::new(EmbeddingEndpointConfig { dimension: 3, ..cfg }).unwrap();
        assert!(matches!(e.embed("x"), Err(Error::DimensionMismatch { expected: 3, actual: 2 })));
    }

    #[test]
    fn config_validation() {
        assert!(ChatEndpointConfig { timeout_ms: 0, ..ChatEndpointConfig::new("http://x", "m") }.validate().is_err());
        assert!(ChatEndpointConfig::new("ftp://x", "m").validate().is_err());
        assert!(ChatEndpointConfig::new("http://x", "m").validate().is_ok());
    }

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
