//! Chat-completion access with a record/replay cassette.
//!
//! Every request is fingerprinted (sha256 over its canonical JSON). In replay
//! mode responses come only from the cassette and no backend is touched.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::PromptBundle;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("cassette miss: {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette line {line}: {message}")]
    CassetteRecord { line: usize, message: String },
    #[error("unknown cassette mode: {0}")]
    UnknownMode(String),
    #[error("no backend configured for {0} mode")]
    NoBackend(CassetteMode),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LlmError {
    /// True for failures reaching the model rather than bad local data.
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Transport { .. } | Self::CassetteMiss { .. } | Self::NoBackend(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_name: String,
    pub system: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;

impl CompletionRequest {
    /// Demonstrations become alternating turns, then the final user turn.
    pub fn from_bundle(model_name: &str, bundle: &PromptBundle) -> Self {
        let mut turns = Vec::with_capacity(bundle.turns.len() * 2 + 1);
        for (user, assistant) in &bundle.turns {
            turns.push(Turn {
                role: Role::User,
                text: user.clone(),
            });
            turns.push(Turn {
                role: Role::Assistant,
                text: assistant.clone(),
            });
        }
        turns.push(Turn {
            role: Role::User,
            text: bundle.final_user.clone(),
        });
        Self {
            model_name: model_name.to_string(),
            system: bundle.system_or_instruction.clone(),
            turns,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.turns.is_empty() {
            return Err(LlmError::InvalidRequest("no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(LlmError::InvalidRequest(format!("turn {} should be {expected:?}", i + 1)));
            }
        }
        if self.turns.len().is_multiple_of(2) {
            return Err(LlmError::InvalidRequest("last turn must be from the user".into()));
        }
        Ok(())
    }
}

/// Hex sha256 of the request's canonical JSON (object keys sorted, texts
/// verbatim).
pub fn fingerprint(request: &CompletionRequest) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so this is sorted.
    let value = serde_json::to_value(request).expect("request serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
    Passthrough,
}

impl FromStr for CassetteMode {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" => Ok(Self::Passthrough),
            _ => Err(LlmError::UnknownMode(s.to_string())),
        }
    }
}

impl std::fmt::Display for CassetteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Record => "record",
            Self::Replay => "replay",
            Self::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub request: CompletionRequest,
    pub response: String,
    pub recorded_at: String,
}

/// Fingerprint-to-response store backed by an append-only JSONL file.
pub struct Cassette {
    mode: CassetteMode,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    /// An in-memory cassette with no backing file.
    pub fn in_memory(mode: CassetteMode) -> Self {
        Self {
            mode,
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads `path` if it exists. In record mode a missing file is created on
    /// the first write; in replay mode it is an error.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, LlmError> {
        let mut entries = HashMap::new();
        match File::open(path) {
            Ok(file) => {
                for (i, line) in BufReader::new(file).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| LlmError::CassetteRecord {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    entries.insert(entry.fingerprint, entry.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != CassetteMode::Replay => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            mode,
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<String> {
        self.entries.read().expect("cassette lock").get(fingerprint).cloned()
    }

    fn append(&self, fp: &str, request: &CompletionRequest, response: &str) -> Result<(), LlmError> {
        let mut writer = self.writer.lock().expect("cassette writer");
        // another thread may have recorded the same request meanwhile
        if self.get(fp).is_some() {
            return Ok(());
        }
        if let Some(path) = &self.path {
            if writer.is_none() {
                *writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let entry = CassetteEntry {
                fingerprint: fp.to_string(),
                request: request.clone(),
                response: response.to_string(),
                recorded_at: chrono::Utc::now().to_rfc3339(),
            };
            let file = writer.as_mut().expect("writer opened");
            let mut line = serde_json::to_string(&entry).map_err(std::io::Error::from)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries
            .write()
            .expect("cassette lock")
            .insert(fp.to_string(), response.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: connection failures, 429, 5xx.
    Transient(String),
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn chat(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self(request)
    }
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            http,
        })
    }

    fn body(request: &CompletionRequest) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({"role": "system", "content": request.system})];
        messages.extend(request.turns.iter().map(|t| serde_json::json!({"role": t.role, "content": t.text})));
        serde_json::json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut builder = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .json(&Self::body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("status {status}")));
        }
        let value: serde_json::Value = response.json().map_err(|e| BackendError::Transient(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
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
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub const DEFAULT_PARALLELISM: usize = 4;

pub struct LlmClient {
    cassette: Cassette,
    backend: Option<Box<dyn ChatBackend>>,
    retry: RetryPolicy,
    parallelism: usize,
}

impl LlmClient {
    pub fn new(cassette: Cassette, backend: Option<Box<dyn ChatBackend>>) -> Self {
        Self {
            cassette,
            backend,
            retry: RetryPolicy::default(),
            parallelism: DEFAULT_PARALLELISM,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    fn call_backend(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let backend = self.backend.as_ref().ok_or(LlmError::NoBackend(self.cassette.mode))?;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match backend.chat(request) {
                Ok(text) => return Ok(text),
                Err(BackendError::Transient(message)) if attempt < self.retry.max_attempts => {
                    tracing::warn!(attempt, %message, "transient completion failure, retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(BackendError::Transient(message) | BackendError::Fatal(message)) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
            }
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let fp = fingerprint(request);
        match self.cassette.mode {
            CassetteMode::Replay => self.cassette.get(&fp).ok_or(LlmError::CassetteMiss { fingerprint: fp }),
            CassetteMode::Record => {
                if let Some(hit) = self.cassette.get(&fp) {
                    return Ok(hit);
                }
                let text = self.call_backend(request)?;
                self.cassette.append(&fp, request, &text)?;
                Ok(text)
            }
            CassetteMode::Passthrough => self.call_backend(request),
        }
    }

    /// Completes all requests with at most `parallelism` in flight. Results
    /// are in input order.
    pub fn complete_many(&self, requests: &[CompletionRequest]) -> Vec<Result<String, LlmError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| requests.par_iter().map(|r| self.complete(r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(question: &str) -> CompletionRequest {
        CompletionRequest {
            model_name: "test-model".into(),
            system: "Answer.".into(),
            turns: vec![Turn {
                role: Role::User,
                text: question.into(),
            }],
            temperature: 0.0,
            max_output_tokens: 64,
        }
    }

    const COC: &str = "The Crush Tour is performed by the band Bon Jovi [8]. The answer is: jazz";

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    #[test]
    fn fingerprint_properties() {
        let a = request("q");
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
        assert_eq!(fingerprint(&a).len(), 64);
        let mut hot = a.clone();
        hot.temperature = 0.7;
        assert_ne!(fingerprint(&a), fingerprint(&hot));
        let mut two = a.clone();
        two.turns = vec![
            Turn { role: Role::User, text: "x".into() },
            Turn { role: Role::Assistant, text: "y".into() },
            Turn { role: Role::User, text: "z".into() },
        ];
        let mut swapped = two.clone();
        swapped.turns.swap(0, 2);
        assert_ne!(fingerprint(&two), fingerprint(&swapped));
        let mut spaced = a.clone();
        spaced.turns[0].text = "q ".into();
        assert_ne!(fingerprint(&a), fingerprint(&spaced));
    }

    #[test]
    fn request_validation() {
        assert!(request("q").validate().is_ok());
        let mut bad = request("q");
        bad.temperature = -1.0;
        assert!(bad.validate().is_err());
        bad = request("q");
        bad.turns.push(Turn { role: Role::Assistant, text: "a".into() });
        assert!(bad.validate().is_err());
        bad.turns.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_then_replay_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let backend = move |_: &CompletionRequest| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(COC.to_string())
        };
        let rec = LlmClient::new(Cassette::open(&path, CassetteMode::Record).unwrap(), Some(Box::new(backend)));
        assert_eq!(rec.complete(&request("q")).unwrap(), COC);
        assert_eq!(rec.complete(&request("q")).unwrap(), COC);
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let replay = LlmClient::new(Cassette::open(&path, CassetteMode::Replay).unwrap(), None);
        for _ in 0..3 {
            assert_eq!(replay.complete(&request("q")).unwrap(), COC);
        }
        let err = replay.complete(&request("other")).unwrap_err();
        assert!(err.to_string().starts_with("cassette miss: "));
        assert!(err.to_string().ends_with(&fingerprint(&request("other"))));
    }

    #[test]
    fn replay_never_calls_backend() {
        let backend = |_: &CompletionRequest| -> Result<String, BackendError> { panic!("network used in replay") };
        let client = LlmClient::new(Cassette::in_memory(CassetteMode::Replay), Some(Box::new(backend)));
        assert!(matches!(client.complete(&request("q")), Err(LlmError::CassetteMiss { .. })));
    }

    #[test]
    fn replay_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Cassette::open(&dir.path().join("none.jsonl"), CassetteMode::Replay).is_err());
    }

    #[test]
    fn transient_errors_are_retried_then_exhausted() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let flaky = move |_: &CompletionRequest| {
            if counter.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok("ok".to_string())
            }
        };
        let client = LlmClient::new(Cassette::in_memory(CassetteMode::Passthrough), Some(Box::new(flaky))).with_retry(fast());
        assert_eq!(client.complete(&request("q")).unwrap(), "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let down = |_: &CompletionRequest| Err(BackendError::Transient("refused".into()));
        let client = LlmClient::new(Cassette::in_memory(CassetteMode::Passthrough), Some(Box::new(down))).with_retry(fast());
        let err = client.complete(&request("q")).unwrap_err();
        assert_eq!(err.to_string(), "transport error after 3 attempt(s): refused");
        assert!(err.is_transport());

        let fatal = |_: &CompletionRequest| Err(BackendError::Fatal("401".into()));
        let client = LlmClient::new(Cassette::in_memory(CassetteMode::Passthrough), Some(Box::new(fatal))).with_retry(fast());
        assert!(matches!(client.complete(&request("q")), Err(LlmError::Transport { attempts: 1, .. })));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(400));
        assert_eq!(p.delay(4), Duration::from_millis(500));
        assert_eq!(p.delay(40), Duration::from_millis(500));
    }

    #[test]
    fn concurrent_record_writes_one_line_per_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (f, p) = (in_flight.clone(), peak.clone());
        let backend = move |r: &CompletionRequest| {
            let now = f.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            f.fetch_sub(1, Ordering::SeqCst);
            Ok(format!("echo {}", r.turns[0].text))
        };
        let client = LlmClient::new(Cassette::open(&path, CassetteMode::Record).unwrap(), Some(Box::new(backend)))
            .with_parallelism(3);
        let requests: Vec<_> = (0..20).map(|i| request(&format!("q{}", i % 10))).collect();
        let out = client.complete_many(&requests);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap(), &format!("echo q{}", i % 10));
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 10);
        for line in text.lines() {
            let entry: CassetteEntry = serde_json::from_str(line).unwrap();
            assert_eq!(entry.fingerprint, fingerprint(&entry.request));
        }
    }

    #[test]
    fn bundle_conversion_alternates_turns() {
        let bundle = PromptBundle {
            system_or_instruction: "sys".into(),
            turns: vec![("u1".into(), "a1".into())],
            final_user: "u2".into(),
            demos_kept: 1,
            estimated_tokens: 3,
        };
        let req = CompletionRequest::from_bundle("m", &bundle);
        assert!(req.validate().is_ok());
        assert_eq!(req.turns.len(), 3);
        assert_eq!(req.temperature, 0.0);
    }
}
