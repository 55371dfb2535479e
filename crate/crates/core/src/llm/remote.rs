use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, ChatBackend, LlmError, Message, Usage};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fatal(LlmError),
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct RemoteBackend {
    config: BackendConfig,
    url: String,
    key: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteBackend {
    /// Fails with [`LlmError::Auth`] when the key variable is unset, before
    /// any request is made.
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Auth(format!("environment variable {} is not set", config.api_key_env)))?;
        let base = config.base_url.clone().expect("validated");
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Http(e.to_string()))?;
        Ok(Self {
            gate: Gate::new(config.max_in_flight),
            config,
            url,
            key,
            client,
        })
    }

    fn attempt(&self, messages: &[Message]) -> Attempt {
        let body = ChatRequest {
            model: self.config.model.as_deref().unwrap_or_default(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let resp = match self
            .client
            .post(&self.url)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout(e.to_string())),
            Err(e) if e.is_connect() => return Attempt::Retry(LlmError::Http(e.to_string())),
            Err(e) => return Attempt::Fatal(LlmError::Http(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fatal(LlmError::Auth(format!("endpoint answered {status}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(LlmError::RateLimited(self.config.max_retries + 1));
        }
        if status.is_server_error() {
            return Attempt::Retry(LlmError::Http(format!("endpoint answered {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(LlmError::Http(format!("endpoint answered {status}: {text}")));
        }
        match resp.json::<ChatResponse>() {
            Ok(parsed) => {
                if let Some(u) = parsed.usage {
                    log::debug!("usage: {} prompt, {} completion tokens", u.prompt_tokens, u.completion_tokens);
                }
                match parsed.choices.into_iter().next() {
                    Some(c) => Attempt::Done(c.message.content.unwrap_or_default()),
                    None => Attempt::Fatal(LlmError::Response("no choices".into())),
                }
            }
            Err(e) if e.is_timeout() => Attempt::Retry(LlmError::Timeout(e.to_string())),
            Err(e) => Attempt::Fatal(LlmError::Response(e.to_string())),
        }
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(messages) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {} against {} failed: {e}", attempt + 1, self.url);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn describe(&self) -> String {
        format!("remote({}, {})", self.url, self.config.model.as_deref().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_auth_error() {
        let mut c = BackendConfig::remote("http://127.0.0.1:9", "m");
        c.api_key_env = "LIFEBENCH_TEST_KEY_THAT_IS_NOT_SET".into();
        assert!(matches!(RemoteBackend::new(c), Err(LlmError::Auth(_))));
    }

    #[test]
    fn gate_bounds_in_flight() {
        let g = Gate::new(2);
        let a = g.acquire();
        let _b = g.acquire();
        assert_eq!(*g.free.lock().unwrap(), 0);
        drop(a);
        assert_eq!(*g.free.lock().unwrap(), 1);
    }
}
