use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Read { .. } => 2,
            CliError::Invariant(_) => 3,
            CliError::Numerical(_) | CliError::Write { .. } => 1,
        }
    }
}

impl From<rbsde_horizon::Error> for CliError {
    fn from(e: rbsde_horizon::Error) -> Self {
        use rbsde_horizon::Error as E;
        match e {
            E::Internal(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}
