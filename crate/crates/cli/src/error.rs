use serde::Serialize;

/// An error as reported on stderr: `{"kind": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: "ConfigError".into(), message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError { kind: "IoError".into(), message: format!("`{}`: {e}", path.display()) }
    }

    /// 2 for problems with the invocation or configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind.as_str() {
            "ConfigError" | "UsageError" => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("errors serialize")
    }
}

impl From<selbias::Error> for CliError {
    fn from(e: selbias::Error) -> Self {
        CliError { kind: e.kind().into(), message: e.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}
