use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input to a model function was NaN or infinite.
    #[error("non-finite input: {0}")]
    Domain(&'static str),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The integrated state left the bounded region the model guarantees.
    #[error("numerical blowup at t = {t}: |z| = {magnitude}")]
    NumericalBlowup { t: f64, magnitude: f64 },

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("statistical test undefined: {0}")]
    TestUndefined(String),

    #[error("no equilibria found")]
    NoEquilibria,

    #[error("human agent fault: {0}")]
    AgentFault(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
