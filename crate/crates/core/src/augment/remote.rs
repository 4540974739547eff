use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Candidate, Capability, ReplacementClient, Span, MAX_CANDIDATES};
use crate::corpus::Topic;
use crate::error::{Error, Result, TransportError};

pub const PROMPT_VERSION: &str = "replace_prompt_v1";
pub const PROMPT_TEMPLATE: &str = include_str!("../../assets/replace_prompt_v1.txt");

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub audit_log: Option<PathBuf>,
}

impl RemoteConfig {
    /// Reads `AUG_API_BASE` (required), `AUG_API_KEY` and `AUG_API_MODEL`.
    pub fn from_env() -> Result<RemoteConfig> {
        let base_url = std::env::var("AUG_API_BASE")
            .map_err(|_| Error::config("augment.client", "remote client needs AUG_API_BASE"))?;
        Ok(RemoteConfig {
            base_url,
            api_key: std::env::var("AUG_API_KEY").ok(),
            model: std::env::var("AUG_API_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into()),
            timeout: Duration::from_secs(30),
            max_attempts: 4,
            backoff: Duration::from_millis(500),
            audit_log: None,
        })
    }
}

/// Chat-completion client. Answers are not reproducible even with a seed.
pub struct RemoteClient {
    cfg: RemoteConfig,
    http: reqwest::blocking::Client,
    audit: Option<Mutex<std::fs::File>>,
}

pub fn render_prompt(text: &str, topic: Option<Topic>, word: &str, n: usize) -> String {
    PROMPT_TEMPLATE
        .replace("{text}", text)
        .replace("{topic}", topic.map(|t| t.name()).unwrap_or("unknown"))
        .replace("{word}", word)
        .replace("{n}", &n.to_string())
}

/// Accepts a line only if it is a single word: no whitespace, punctuation or
/// symbols once list markers are stripped.
pub fn parse_candidates(content: &str) -> Vec<String> {
    content
        .lines()
        .filter_map(|line| {
            let t = line.trim();
            let t = t.trim_start_matches(|c: char| c.is_ascii_digit());
            let t = t.trim_start_matches(['.', ')', '、', '-', '*', '•']).trim();
            let ok = !t.is_empty() && t.chars().all(|c| c.is_alphanumeric());
            ok.then(|| t.to_string())
        })
        .collect()
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<RemoteClient> {
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::config("augment.client", format!("http client: {e}")))?;
        let audit = match &cfg.audit_log {
            Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
            None => None,
        };
        Ok(RemoteClient { cfg, http, audit })
    }

    fn log(&self, entry: &Value) {
        if let Some(f) = &self.audit {
            let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
            if let Err(e) = writeln!(f, "{entry}") {
                log::warn!("audit log write failed: {e}");
            }
        }
    }

    fn send(&self, body: &Value) -> Result<Value> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.http.post(&url).json(body);
            if let Some(k) = &self.cfg.api_key {
                req = req.bearer_auth(k);
            }
            let failure = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let text = resp.text().map_err(|e| transport(e.to_string(), None, attempt, false, None))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| transport(format!("malformed response: {e}"), None, attempt, false, None));
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse().ok());
                    let retryable = status == 429 || status >= 500;
                    transport(format!("HTTP {status}"), Some(status), attempt, retryable, retry_after)
                }
                Err(e) => transport(e.to_string(), None, attempt, e.is_timeout() || e.is_connect(), None),
            };
            let Error::Transport(t) = &failure else { unreachable!() };
            if !t.retryable || attempt >= self.cfg.max_attempts {
                return Err(failure);
            }
            let wait = t
                .retry_after_secs
                .map(Duration::from_secs)
                .unwrap_or(self.cfg.backoff * 2u32.pow(attempt - 1));
            log::debug!("retrying after {wait:?}: {t}");
            std::thread::sleep(wait);
        }
    }
}

fn transport(message: String, status: Option<u16>, attempts: u32, retryable: bool, retry_after: Option<u64>) -> Error {
    Error::Transport(TransportError {
        message,
        status,
        attempts,
        retryable,
        retry_after_secs: retry_after,
    })
}

impl ReplacementClient for RemoteClient {
    fn capability(&self) -> Capability {
        Capability {
            max_text_chars: 2000,
            max_candidates: MAX_CANDIDATES,
            deterministic: false,
        }
    }

    fn propose(&self, text: &str, target: &Span, topic: Option<Topic>, seed: u64) -> Result<Vec<Candidate>> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": render_prompt(text, topic, &target.surface, MAX_CANDIDATES)}],
            "temperature": 0.7,
            "seed": seed,
        });
        let result = self.send(&body);
        let content = result
            .as_ref()
            .ok()
            .and_then(|v| v.pointer("/choices/0/message/content"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let cands = content.as_deref().map(parse_candidates).unwrap_or_default();
        self.log(&json!({
            "prompt_version": PROMPT_VERSION,
            "request": body,
            "response": result.as_ref().ok(),
            "error": result.as_ref().err().map(|e| e.to_string()),
            "accepted": cands,
        }));
        result?;
        if content.is_none() {
            return Err(transport("response has no message content".into(), None, 1, false, None));
        }
        Ok(cands
            .into_iter()
            .enumerate()
            .map(|(rank, text)| Candidate {
                text,
                score: 1.0 / (rank + 1) as f64,
            })
            .collect())
    }
}
