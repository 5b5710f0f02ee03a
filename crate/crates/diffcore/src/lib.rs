//! Minimal reverse-mode differentiation core.
//!
//! Dense `f64` tensors, a recording [`Tape`], the handful of layers a
//! dual-stream point/grid transformer needs, [`Adam`], and a central
//! finite-difference [`gradient_check`].

mod error;
mod gradcheck;
mod kernels;
pub mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::DiffError;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use layers::{knn, Conv3x3, EdgeConv, LayerNorm, Linear, MultiHeadAttention, ResidualBlock};
pub use optim::Adam;
pub use params::{kaiming_normal, truncated_normal, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
