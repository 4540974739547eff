use std::fmt;

/// One broken rule on one field of an input record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn push(&mut self, field: &str, rule: impl Into<String>) {
        self.0.push(Violation {
            field: field.to_string(),
            rule: rule.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.0.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Failure talking to a remote replacement service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    pub status: Option<u16>,
    pub attempts: u32,
    pub retryable: bool,
    pub retry_after_secs: Option<u64>,
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (attempts: {}", self.message, self.attempts)?;
        if let Some(s) = self.status {
            write!(f, ", status: {s}")?;
        }
        if let Some(s) = self.retry_after_secs {
            write!(f, ", retry after {s}s")?;
        }
        write!(f, ", retryable: {})", self.retryable)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error("invalid record: {0}")]
    InvalidRecord(Violations),
    #[error("{0}")]
    Shape(String),
    #[error("{what} diverged: {detail}")]
    Diverged { what: String, detail: String },
    #[error("no proposal for `{0}`")]
    NoProposal(String),
    #[error("transport error: {0}")]
    Transport(TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn diverged(what: &str, detail: impl Into<String>) -> Self {
        Error::Diverged {
            what: what.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
