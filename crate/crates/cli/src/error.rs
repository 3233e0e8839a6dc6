use std::fmt;
use std::path::Path;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configs or input files. Exit code 1.
    Validation(String),
    /// Everything else. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Runtime(format!("i/o error on {}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    /// Stable prefix that starts every error line on stderr.
    pub fn prefix(&self) -> &'static str {
        match self {
            Self::Validation(_) => "facesynth: validation error:",
            Self::Runtime(_) => "facesynth: runtime error:",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) | Self::Runtime(m) => write!(f, "{} {m}", self.prefix()),
        }
    }
}

impl From<facesynth_core::Error> for CliError {
    fn from(e: facesynth_core::Error) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
