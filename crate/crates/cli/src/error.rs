use std::fmt::Display;

use serde_json::json;

/// A failure reported to the caller as one JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn report(&self, config_hash: Option<&str>) -> String {
        json!({
            "error": { "kind": self.kind, "message": self.message },
            "config_hash": config_hash,
        })
        .to_string()
    }
}

pub trait Context<T> {
    fn ctx(self, kind: &'static str, what: impl Display) -> Result<T, CliError>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn ctx(self, kind: &'static str, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(kind, format!("{what}: {e}")))
    }
}
