//! Command-line front end: libsvm ingestion, synthetic problems, the
//! averaging experiment, and CSV output.

pub mod app;
pub mod error;
pub mod experiment;
pub mod libsvm;
pub mod source;

pub use app::cli_main;
pub use error::{CliError, DataError};
