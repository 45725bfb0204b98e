use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("component {index} is degenerate (eigenvalue {eigenvalue:e}, leading {leading:e})")]
    DegenerateComponent {
        index: usize,
        eigenvalue: f64,
        leading: f64,
    },

    #[error("verticality coefficient {0} is too close to 1; no recurrence can be extracted")]
    Verticality(f64),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("ensemble of size {0} is too small for sample moments (need at least 2)")]
    InsufficientEnsemble(usize),

    #[error("linearization point coincides with the forecast obstacle center")]
    DegenerateLinearization,

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),
}
