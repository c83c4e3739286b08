//! Multi-axis cross-covariance attention (MAXCA) for deformable 3D image
//! registration, built on a small dense-tensor and reverse-mode autodiff core.
//!
//! Feature maps are stored channel-first as `[C][H][W][D]`; displacement
//! fields as `[3][H][W][D]` in voxel units.

pub mod alloc;
pub mod autodiff;
mod error;
pub mod gradcheck;
pub mod io;
pub mod maxca;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod regnet;
mod simd;
pub mod synth;
pub mod tensor;

pub use autodiff::{backward, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
