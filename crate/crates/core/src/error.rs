use std::fmt;
use std::path::{Path, PathBuf};

/// Invalid scenario or command-line configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
    pub line: Option<usize>,
    pub file: Option<PathBuf>,
}

impl ConfigError {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            message: message.into(),
            line: None,
            file: None,
        }
    }

    /// Wraps a JSON decoding error; serde already reports line and column.
    pub fn parse(err: &serde_json::Error, _text: &str) -> Self {
        Self {
            key: None,
            message: err.to_string(),
            line: None,
            file: None,
        }
    }

    /// Finds the first line of `text` that mentions the offending key.
    pub fn locate(mut self, text: &str) -> Self {
        if let Some(key) = &self.key {
            let needle = format!("\"{key}\"");
            self.line = text
                .lines()
                .position(|l| l.contains(&needle))
                .map(|i| i + 1);
        }
        self
    }

    pub fn in_file(mut self, path: &Path) -> Self {
        self.file = Some(path.to_path_buf());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}: ", file.display())?;
        }
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        match &self.key {
            Some(key) => write!(f, "`{key}`: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: crate::metrics::CsvError,
    },
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Csv { .. } => 3,
        }
    }
}
