use serde::Serialize;

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

/// Printed to stderr as a single JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            path: None,
            line: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, message)
    }

    pub fn at_line(mut self, path: &str, line: u64) -> Self {
        self.path = Some(path.to_string());
        self.line = Some(line);
        self
    }

    /// Classifies a library error raised while loading or preparing inputs.
    pub fn from_data(e: uend::Error) -> Self {
        match e {
            uend::Error::Format { path, offset, message } => CliError {
                kind: ErrorKind::Data,
                message: format!("{path} at {offset}: {message}"),
                path: Some(path),
                line: Some(offset),
            },
            uend::Error::Io { path, source } => CliError {
                kind: ErrorKind::Data,
                message: format!("{}: {source}", path.display()),
                path: Some(path.display().to_string()),
                line: None,
            },
            other => CliError::data(other.to_string()),
        }
    }

    /// Classifies a library error raised during computation.
    pub fn from_run(e: uend::Error) -> Self {
        match e {
            uend::Error::Io { .. } | uend::Error::Format { .. } => Self::from_data(e),
            other => CliError::runtime(other.to_string()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}
