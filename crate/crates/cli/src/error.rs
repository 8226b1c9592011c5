use less_core::LessError;
use thiserror::Error;

use crate::libsvm::ParseErrorKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("dimension hint {hint} is below the largest feature index {max_index}")]
    DimensionMismatch { hint: usize, max_index: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] LessError),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("numerical failure: {0}")]
    Numerical(LessError),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Context { source, .. } => source.exit_code(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        CliError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl From<LessError> for CliError {
    fn from(e: LessError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e)
        } else if matches!(e, LessError::InvalidConfig(_)) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(DataError::Core(e))
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(DataError::Invalid(format!("csv: {e}")))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(DataError::Invalid(format!("io: {e}")))
    }
}
