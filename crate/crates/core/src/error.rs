use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("numeric overflow in layer {layer}")]
    NumericOverflow { layer: usize },
    #[error("invalid sequence: {0}")]
    Domain(String),
    #[error("training diverged at {stage} {index}")]
    Training { stage: &'static str, index: usize },
    #[error("subspace build failed at gradient sample {sample}")]
    Build { sample: usize },
    #[error("non-finite loss at batch index {index}")]
    Numeric { index: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate evaluation: {0}")]
    DegenerateEvaluation(String),
    #[error("ill-conditioned kernel matrix: {0}")]
    Conditioning(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
