//! Error taxonomy shared by the library and the CLI.
//!
//! Every variant maps onto one of four categories; the CLI prints a
//! single-line `ERROR(<category>):` diagnostic and exits with the
//! category's code (config = 2, format/io = 3, numeric = 4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or missing; names the field.
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Input contained NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    /// A vector that must carry direction information had (near-)zero norm.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// Learning-rate schedule queried past its final step.
    #[error("schedule exhausted: step {step} exceeds total {total}")]
    ScheduleExhausted { step: u64, total: u64 },

    /// Rows that must be unit-norm were not.
    #[error("rows not unit-norm: {0}")]
    NotNormalized(String),

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Malformed file contents; carries the 1-based line when known.
    #[error("{}", format_line(.line, .message))]
    Format { line: Option<usize>, message: String },

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Numeric failure (non-convergence, overflow) not covered above.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn format_line(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(n) => format!("format error at line {n}: {message}"),
        None => format!("format error: {message}"),
    }
}

/// Diagnostic category; drives the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Format,
    Numeric,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Format => "format",
            Category::Numeric => "numeric",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Format | Category::Io => 3,
            Category::Numeric => 4,
        }
    }
}

impl Error {
    pub fn invalid_config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn format_at(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Error::Format {
            line: None,
            message: message.into(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::InvalidConfig { .. }
            | Error::ClassMismatch(_)
            | Error::EmptyClass(_)
            | Error::Stratification(_)
            | Error::EmptyInput(_)
            | Error::InsufficientData(_) => Category::Config,
            Error::Format { .. }
            | Error::NotACheckpoint(_)
            | Error::UnsupportedVersion(_)
            | Error::CorruptCheckpoint(_)
            | Error::DimensionMismatch(_) => Category::Format,
            Error::NonFiniteInput(_)
            | Error::DegenerateEmbedding(_)
            | Error::ScheduleExhausted { .. }
            | Error::NotNormalized(_)
            | Error::Numeric(_) => Category::Numeric,
            Error::Io(_) => Category::Io,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_map_to_documented_exit_codes() {
        assert_eq!(Error::invalid_config("seed", "missing").category().exit_code(), 2);
        assert_eq!(Error::format_at(3, "ragged row").category().exit_code(), 3);
        assert_eq!(Error::Numeric("diverged".into()).category().exit_code(), 4);
        assert_eq!(Error::NotACheckpoint("bad magic".into()).category().exit_code(), 3);
    }

    #[test]
    fn format_error_carries_line_number() {
        let msg = Error::format_at(17, "non-numeric value").to_string();
        assert!(msg.contains("line 17"), "{msg}");
    }
}
