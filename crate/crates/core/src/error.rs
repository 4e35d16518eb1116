use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VineError {
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("non-finite value in input: {0}")]
    NonFinite(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("insufficient sample: need at least {needed} observations, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("singular correlation matrix for variables {0:?}")]
    Singular(Vec<usize>),
    #[error("invalid vine structure: {0}")]
    Structure(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate variable {0} in vine order")]
    DuplicateVariable(usize),
    #[error("model format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, VineError>;
