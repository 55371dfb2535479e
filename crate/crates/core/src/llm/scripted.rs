use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{transcript_hash, ChatBackend, LlmError, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub transcript_hash: String,
    pub response: String,
}

/// Deterministic backend: replies are looked up by transcript hash.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: HashMap<String, String>,
    source: String,
}

impl ScriptedBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| (e.transcript_hash, e.response))
                .collect(),
            source: "inline".into(),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, LlmError> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        let mut b = Self::from_entries(entries);
        b.source = path.display().to_string();
        Ok(b)
    }

    pub fn insert(&mut self, messages: &[Message], response: impl Into<String>) {
        self.entries.insert(transcript_hash(messages), response.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let hash = transcript_hash(messages);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or(LlmError::ScriptMiss { hash })
    }

    fn describe(&self) -> String {
        format!("scripted({})", self.source)
    }
}

/// A backend computed by a function of the transcript.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&[Message]) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&[Message]) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        (self.f)(messages)
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_miss() {
        let t = vec![Message::user("q")];
        let mut b = ScriptedBackend::default();
        b.insert(&t, "ANSWER: 7");
        assert_eq!(b.complete(&t).unwrap(), "ANSWER: 7");
        assert_eq!(b.complete(&t).unwrap(), "ANSWER: 7");
        assert!(matches!(
            b.complete(&[Message::user("other")]),
            Err(LlmError::ScriptMiss { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let t = vec![Message::system("s"), Message::user("q")];
        let line = serde_json::to_string(&ReplayEntry {
            transcript_hash: transcript_hash(&t),
            response: "ANSWER: yes".into(),
        })
        .unwrap();
        std::fs::write(&path, format!("{line}\n\n")).unwrap();
        let b = ScriptedBackend::from_jsonl(&path).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.complete(&t).unwrap(), "ANSWER: yes");
    }
}
