//! Chat-completion and embedding backends.
//!
//! A [`Backend`] wraps a [`ChatTransport`] (HTTP client or scripted mock) with request
//! validation, bounded concurrency, retries with exponential backoff and call counting.
//! [`CachedBackend`] layers the on-disk response cache on top.

mod cache;
mod embed;
mod mock;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::sha256_hex;

pub use cache::{CacheKey, CacheStats, CachedBackend, ResponseCache};
pub use embed::{cosine_similarity, Embedder, MockEmbedder, RemoteEmbedder, MOCK_EMBEDDING_DIM};
pub use mock::{MockRule, MockRules, ScriptedMock};
pub use remote::RemoteChat;

pub const DEFAULT_MAX_TOKENS: u32 = 512;

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

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub mime: String,
    pub data: Vec<u8>,
}

impl ImageAttachment {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mime = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("png") => "image/png",
            Some("jpg") | Some("jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "application/octet-stream",
        };
        Ok(Self {
            mime: mime.to_string(),
            data,
        })
    }

    pub fn sha256(&self) -> String {
        sha256_hex(&self.data)
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Informational; the serving backend stamps its own id before sending.
    pub backend_id: String,
    pub messages: Vec<Message>,
    pub image_attachment: Option<ImageAttachment>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ChatRequest {
    fn default() -> Self {
        Self {
            backend_id: String::new(),
            messages: Vec::new(),
            image_attachment: None,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl ChatRequest {
    pub fn user(content: impl Into<String>) -> Self {
        Self::default().with_message(Role::User, content)
    }

    pub fn with_message(mut self, role: Role, content: impl Into<String>) -> Self {
        self.messages.push(Message {
            role,
            content: content.into(),
        });
        self
    }

    pub fn with_system(mut self, content: impl Into<String>) -> Self {
        self.messages.insert(
            0,
            Message {
                role: Role::System,
                content: content.into(),
            },
        );
        self
    }

    pub fn with_image(mut self, image: ImageAttachment) -> Self {
        self.image_attachment = Some(image);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(Error::InvalidRequest("at least one user message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// All message contents joined by blank lines. Mock rules match against this.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub from_cache: bool,
    pub latency: Duration,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
            from_cache: false,
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    ScriptedMock,
}

fn default_retries() -> usize {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub supports_images: bool,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    /// Name of the environment variable holding the API key (remote only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Rule file for scripted mocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_path: Option<std::path::PathBuf>,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl BackendSpec {
    pub fn scripted(backend_id: &str, supports_images: bool) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            kind: BackendKind::ScriptedMock,
            endpoint: None,
            model_name: format!("{backend_id}-scripted"),
            supports_images,
            max_retries: default_retries(),
            concurrency_limit: default_concurrency(),
            api_key_env: None,
            rules_path: None,
            initial_backoff_ms: 0,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend_id.trim().is_empty() {
            return Err(Error::Config("backend_id must be non-empty".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(Error::Config(format!(
                "{}: concurrency_limit must be at least 1",
                self.backend_id
            )));
        }
        if self.kind == BackendKind::RemoteChat {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(Error::Config(format!("{}: remote backend needs an endpoint", self.backend_id)));
            }
            if self.api_key_env.is_none() {
                return Err(Error::Config(format!(
                    "{}: remote backend needs api_key_env",
                    self.backend_id
                )));
            }
        }
        Ok(())
    }
}

/// How a single transport attempt failed.
#[derive(Debug)]
pub enum TransportFailure {
    Retryable(String),
    RateLimited(String),
    Fatal(Error),
}

/// One attempt at producing a completion. No retries, no caching.
pub trait ChatTransport: Send + Sync {
    fn send(&self, spec: &BackendSpec, request: &ChatRequest) -> std::result::Result<ChatResponse, TransportFailure>;
}

/// Anything tasks can send chat requests to.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn model_name(&self) -> &str;
    fn supports_images(&self) -> bool;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
    /// Requests that reached the underlying transport, including retries.
    fn call_count(&self) -> usize;
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Backend {
    spec: BackendSpec,
    transport: Box<dyn ChatTransport>,
    calls: AtomicUsize,
    gate: Semaphore,
}

impl Backend {
    pub fn with_transport(spec: BackendSpec, transport: Box<dyn ChatTransport>) -> Result<Self> {
        spec.validate()?;
        let gate = Semaphore::new(spec.concurrency_limit);
        Ok(Self {
            spec,
            transport,
            calls: AtomicUsize::new(0),
            gate,
        })
    }

    /// Builds the transport named by the spec. Scripted mocks load their rule file.
    pub fn from_spec(spec: BackendSpec) -> Result<Self> {
        let transport: Box<dyn ChatTransport> = match spec.kind {
            BackendKind::RemoteChat => Box::new(RemoteChat::new(&spec)?),
            BackendKind::ScriptedMock => match &spec.rules_path {
                Some(path) => Box::new(ScriptedMock::from_file(path)?),
                None => {
                    return Err(Error::Config(format!(
                        "{}: scripted mock needs rules_path",
                        spec.backend_id
                    )))
                }
            },
        };
        Self::with_transport(spec, transport)
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    /// Fails with `AuthMissing` when a remote backend's credential variable is unset.
    pub fn check_credentials(&self) -> Result<()> {
        if self.spec.kind != BackendKind::RemoteChat {
            return Ok(());
        }
        remote::api_key(&self.spec).map(|_| ())
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let ms = self
            .spec
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(10))
            .min(30_000);
        Duration::from_millis(ms)
    }
}

impl ChatBackend for Backend {
    fn backend_id(&self) -> &str {
        &self.spec.backend_id
    }

    fn model_name(&self) -> &str {
        &self.spec.model_name
    }

    fn supports_images(&self) -> bool {
        self.spec.supports_images
    }

    fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        if request.image_attachment.is_some() && !self.spec.supports_images {
            return Err(Error::ImageUnsupported(self.spec.backend_id.clone()));
        }
        let mut request = request.clone();
        request.backend_id = self.spec.backend_id.clone();

        let _permit = self.gate.acquire();
        let attempts = self.spec.max_retries + 1;
        let mut all_rate_limited = true;
        let mut last = String::new();
        for attempt in 0..attempts {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            match self.transport.send(&self.spec, &request) {
                Ok(mut resp) => {
                    resp.latency = started.elapsed();
                    resp.from_cache = false;
                    return Ok(resp);
                }
                Err(TransportFailure::Fatal(e)) => return Err(e),
                Err(TransportFailure::Retryable(msg)) => {
                    all_rate_limited = false;
                    last = msg;
                }
                Err(TransportFailure::RateLimited(msg)) => last = msg,
            }
            log::debug!("{}: attempt {} failed: {last}", self.spec.backend_id, attempt + 1);
            if attempt + 1 < attempts {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        if all_rate_limited {
            Err(Error::RateLimited(self.spec.backend_id.clone()))
        } else {
            Err(Error::TransportError {
                backend_id: self.spec.backend_id.clone(),
                attempts,
                message: last,
            })
        }
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn supports_images(&self) -> bool {
        (**self).supports_images()
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        (**self).complete(request)
    }
    fn call_count(&self) -> usize {
        (**self).call_count()
    }
}
