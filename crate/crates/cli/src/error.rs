use std::fmt;
use std::path::Path;

use serde_json::json;
use wavemoments::{Error, ErrorCategory};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    Io { path: String, message: String },
    Csv { line: u64, message: String },
}

impl CliError {
    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => ErrorCategory::Config,
            CliError::Io { .. } | CliError::Csv { .. } => ErrorCategory::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numerical => 4,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Csv { .. } => "csv",
        }
    }

    pub fn to_json(&self) -> String {
        let category = match self.category() {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        };
        let mut body = json!({
            "code": self.code(),
            "category": category,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Csv { line, .. } => body["line"] = json!(line),
            CliError::Io { path, .. } => body["path"] = json!(path),
            CliError::Core(Error::DegenerateLevel { level, .. }) => body["level"] = json!(level),
            CliError::Core(Error::Parse { column, .. }) => body["column"] = json!(column),
            _ => {}
        }
        json!({ "error": body }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
            CliError::Csv { line, message } => write!(f, "line {line}: {message}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
