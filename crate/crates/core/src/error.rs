use thiserror::Error;

/// Errors raised by model construction and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// The survival process hit zero where it must stay positive.
    #[error("positivity violated: {what} = {value:e} at level {level}, path bits {path_bits:#b}")]
    Positivity {
        what: &'static str,
        level: usize,
        path_bits: usize,
        value: f64,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("barrier violates terminal condition: S^F = {value:e} > 0 at level {level}, path bits {path_bits:#b}")]
    TerminalBarrier {
        level: usize,
        path_bits: usize,
        value: f64,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
