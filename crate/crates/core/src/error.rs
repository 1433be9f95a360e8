use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("label {label} is outside 0..{num_classes} and is not the ignore label")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("masked fraction band [{low}, {high}] not reached after {attempts} attempts")]
    CoverageUnreachable { low: f64, high: f64, attempts: u32 },
    #[error("no class has a nonzero union; nothing to evaluate")]
    EmptyEvaluation,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
