use thiserror::Error;

/// Errors raised by simulation, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter outside the admissible box: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("simulation diverged: particle {particle}, step {step}, value {value}")]
    Diverged {
        particle: usize,
        step: usize,
        value: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("singular normal matrix: {0}")]
    Rank(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Domain(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
