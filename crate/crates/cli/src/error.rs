use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const NOT_COERCIVE: i32 = 5;
    pub const BRACKET_INVALID: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(
        "diffusion matrix is not coercive (smallest eigenvalue of its symmetric part: {alpha:e})"
    )]
    NotCoercive { alpha: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("sweep bracket is invalid: {0}")]
    BracketInvalid(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Report(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::NotCoercive { .. } => exit::NOT_COERCIVE,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::BracketInvalid(_) => exit::BRACKET_INVALID,
            CliError::Io(_) | CliError::Report(_) | CliError::Other(_) => exit::OTHER,
        }
    }
}
