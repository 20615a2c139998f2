//! Batch front end: scenario files in, reports and CSV tables out.

pub mod config;
pub mod error;
pub mod expr;
pub mod run;

pub use error::CliError;
pub use run::{execute, Options, Outcome};
