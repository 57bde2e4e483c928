//! Large selective kernel (LSK) convolutions.
//!
//! Decomposed large depthwise kernels with per-pixel kernel selection, LSK
//! blocks and four-stage LSKNet backbones, an analytic parameter/FLOP model
//! with an exhaustive decomposition planner, and activation-analysis metrics.
//! All arithmetic is `f64` on dense NCHW tensors, and every operator has an
//! exact vector-Jacobian product.

pub mod analysis;
pub mod backbone;
pub mod block;
pub mod bundle;
pub mod cost;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod lsk;
pub mod lskt;
pub mod nn;
pub mod params;
pub mod plan;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use plan::{DecompositionPlan, KernelSpec};
pub use tensor::{Distribution, Shape, Tensor};
