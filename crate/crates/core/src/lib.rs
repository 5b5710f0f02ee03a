//! Triangle mesh denoising with a dual-stream transformer over geodesic
//! local surface descriptors.

pub mod error;
pub mod checkpoint;
pub mod descriptor;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod patching;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
pub use mesh::{FaceFrame, Mesh, Vec3};
