//! Chat-completion access: a backend trait, a retrying/throttling wrapper
//! that keeps a transcript, and answer parsing.

mod mock;
mod openai;
mod oracle;
mod parse;

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{normalize_prompt, prompt_digest, FixtureRecord, MockBackend, RecordingBackend};
pub use oracle::Oracle;
pub use openai::{OpenAiBackend, OpenAiConfig};
pub use parse::{find_json_objects, option_logprobs, parse_option_label, parse_structured, FormatError, StructuredAnswer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_output_tokens: u32,
    pub want_logprobs: bool,
    pub top_logprobs: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            seed: None,
            max_output_tokens: 2048,
            want_logprobs: false,
            top_logprobs: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_logprobs(mut self, top: u32) -> Self {
        self.want_logprobs = true;
        self.top_logprobs = top.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub token: String,
    pub logprob: f64,
}

/// One generated token with the alternatives the backend reported for its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top: Vec<TokenAlternative>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Counts are a local estimate, not backend-reported.
    #[serde(default)]
    pub estimated: bool,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn add(&mut self, other: &Usage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.estimated |= other.estimated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default = "default_finish")]
    pub finish_reason: String,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

fn default_finish() -> String {
    "stop".into()
}

impl CompletionResponse {
    /// Plain text response with estimated usage.
    pub fn text_only(prompt: &str, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            usage: Usage {
                input_tokens: estimate_tokens(prompt),
                output_tokens: estimate_tokens(&text),
                estimated: true,
            },
            text,
            finish_reason: default_finish(),
            logprobs: None,
        }
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend refused the request: {0}")]
    Refused(String),
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("no fixture for prompt digest {digest}")]
    Unfixtured { digest: String },
    #[error("backend capability missing: {0}")]
    Capability(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

/// One request/response exchange as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub backend: String,
    pub digest: String,
    pub request: CompletionRequest,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<CompletionResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<GatewayError>,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Wraps a backend with retries, an in-flight cap and a transcript.
pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    retry: RetryPolicy,
    slots: Semaphore,
    seq: AtomicU64,
    entries: Mutex<Vec<TranscriptEntry>>,
    sink: Mutex<Option<File>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            slots: Semaphore {
                free: Mutex::new(8),
                cv: Condvar::new(),
            },
            seq: AtomicU64::new(0),
            entries: Mutex::new(Vec::new()),
            sink: Mutex::new(None),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.slots = Semaphore {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        };
        self
    }

    /// Appends every exchange to `path` as one JSON line, flushed per entry.
    pub fn with_transcript_file(self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        *self.sink.lock().unwrap_or_else(|e| e.into_inner()) = Some(file);
        Ok(self)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let result;
        let mut attempts = 0;
        {
            let _slot = self.slots.acquire();
            loop {
                attempts += 1;
                match self.backend.complete(request) {
                    Err(e) if e.is_transient() && attempts < self.retry.max_attempts => {
                        let wait = self.retry.delay(attempts - 1);
                        tracing::warn!(error = %e, attempt = attempts, ?wait, "retrying completion");
                        std::thread::sleep(wait);
                    }
                    other => {
                        result = other;
                        break;
                    }
                }
            }
        }
        let entry = TranscriptEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            backend: self.backend.name().to_string(),
            digest: prompt_digest(&request.prompt),
            request: request.clone(),
            attempts,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().cloned(),
        };
        self.log(entry);
        result
    }

    fn log(&self, entry: TranscriptEntry) {
        if let Some(file) = self.sink.lock().unwrap_or_else(|e| e.into_inner()).as_mut() {
            let line = serde_json::to_string(&entry).expect("transcript entries serialize");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                tracing::error!(error = %e, "transcript write failed");
            }
        }
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }

    /// Entries so far, ordered by sequence number.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        let mut v = self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone();
        v.sort_by_key(|e| e.seq);
        v
    }

    /// Sum of usage over all successful responses.
    pub fn usage(&self) -> Usage {
        let mut total = Usage::default();
        for e in self.entries.lock().unwrap_or_else(|e| e.into_inner()).iter() {
            if let Some(r) = &e.response {
                total.add(&r.usage);
            }
        }
        total
    }
}

/// Reads a transcript file written by [`Gateway::with_transcript_file`].
/// A truncated final line is ignored.
pub fn read_transcript(path: impl AsRef<Path>) -> std::io::Result<Vec<TranscriptEntry>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}
