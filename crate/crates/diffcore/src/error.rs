use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("width {width} is not divisible by {heads} attention heads")]
    HeadDivisibility { width: usize, heads: usize },

    #[error("edge convolution with k={k} needs more than k points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
}

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
