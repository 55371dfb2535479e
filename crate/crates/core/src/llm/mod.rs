//! Chat-completion backends: a remote HTTP client, a replay-file backend
//! keyed by transcript hash, and a recorder that keeps an audit log.

mod remote;
mod scripted;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::RemoteBackend;
pub use scripted::{FnBackend, ReplayEntry, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication: {0}")]
    Auth(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("no replay entry for transcript {hash}")]
    ScriptMiss { hash: String },
    #[error("http: {0}")]
    Http(String),
    #[error("backend config: {0}")]
    Config(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that turns a transcript into a reply. Implementations are
/// shared across worker threads.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError>;

    fn describe(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        (**self).complete(messages)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        (**self).complete(messages)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// SHA-256 over the JSON encoding of the whole transcript.
pub fn transcript_hash(messages: &[Message]) -> String {
    let json = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Replay file for the scripted backend.
    pub replay: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: None,
            model: None,
            api_key_env: "LIFEBENCH_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            replay: None,
        }
    }
}

impl BackendConfig {
    pub fn remote(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            base_url: Some(base_url.into()),
            model: Some(model.into()),
            ..Self::default()
        }
    }

    pub fn scripted(replay: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            replay: Some(replay.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be >= 1".into()));
        }
        match self.kind {
            BackendKind::Remote => {
                if self.base_url.as_deref().unwrap_or("").is_empty() {
                    return Err(LlmError::Config("remote backend needs a base url".into()));
                }
                if self.model.as_deref().unwrap_or("").is_empty() {
                    return Err(LlmError::Config("remote backend needs a model name".into()));
                }
            }
            BackendKind::Scripted => {
                if self.replay.is_none() {
                    return Err(LlmError::Config("scripted backend needs a replay file".into()));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Remote => Box::new(RemoteBackend::new(self.clone())?),
            BackendKind::Scripted => Box::new(ScriptedBackend::from_jsonl(
                self.replay.as_ref().expect("validated"),
            )?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One call as seen by the recorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub transcript_hash: String,
    pub messages: Vec<Message>,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Wraps a backend and keeps every exchange, successful or not.
pub struct Recorder<B> {
    inner: B,
    log: Mutex<Vec<ChatExchange>>,
}

impl<B: ChatBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("recorder lock").len()
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.log.lock().expect("recorder lock").clone()
    }

    /// Replay entries for every successful exchange, first answer wins.
    pub fn replay_entries(&self) -> Vec<ReplayEntry> {
        let mut seen = std::collections::HashSet::new();
        self.exchanges()
            .into_iter()
            .filter_map(|x| {
                let response = x.response?;
                seen.insert(x.transcript_hash.clone()).then_some(ReplayEntry {
                    transcript_hash: x.transcript_hash,
                    response,
                })
            })
            .collect()
    }

    pub fn write_log(&self, path: &Path) -> Result<(), LlmError> {
        write_jsonl(path, &self.exchanges())
    }

    /// Writes the replay entries sorted by transcript hash, so concurrent
    /// runs produce the same file.
    pub fn write_replay(&self, path: &Path) -> Result<(), LlmError> {
        let mut entries = self.replay_entries();
        entries.sort_by(|a, b| a.transcript_hash.cmp(&b.transcript_hash));
        write_jsonl(path, &entries)
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Recorder<B> {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let result = self.inner.complete(messages);
        let exchange = ChatExchange {
            transcript_hash: transcript_hash(messages),
            messages: messages.to_vec(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        self.log.lock().expect("recorder lock").push(exchange);
        result
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), LlmError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| LlmError::Response(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_covers_whole_transcript() {
        let a = vec![Message::user("hi")];
        let b = vec![Message::system("s"), Message::user("hi")];
        assert_ne!(transcript_hash(&a), transcript_hash(&b));
        assert_eq!(transcript_hash(&a), transcript_hash(&a.clone()));
        assert_eq!(transcript_hash(&a).len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_err());
        assert!(BackendConfig::scripted("x.jsonl").validate().is_ok());
        let mut r = BackendConfig::remote("http://localhost:1", "m");
        assert!(r.validate().is_ok());
        r.temperature = -0.5;
        assert!(r.validate().is_err());
        assert!(BackendConfig::remote("", "m").validate().is_err());
    }

    #[test]
    fn recorder_keeps_failures() {
        let echo = FnBackend::new("echo", |m: &[Message]| {
            if m[0].content == "fail" {
                Err(LlmError::Http("boom".into()))
            } else {
                Ok(m[0].content.to_uppercase())
            }
        });
        let rec = Recorder::new(echo);
        assert_eq!(rec.complete(&[Message::user("ab")]).unwrap(), "AB");
        assert!(rec.complete(&[Message::user("fail")]).is_err());
        assert_eq!(rec.calls(), 2);
        assert_eq!(rec.replay_entries().len(), 1);
        assert!(rec.exchanges()[1].error.is_some());
    }
}
