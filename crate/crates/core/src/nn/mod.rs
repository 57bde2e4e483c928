//! Forward and vector-Jacobian implementations of the primitive operators.

pub mod act;
pub mod conv;
pub mod pool;

pub use act::{gelu, gelu_vjp, residual_add, sigmoid, sigmoid_vjp, Affine};
pub use conv::{conv2d_forward, conv2d_vjp, ConvKind, ConvVjp, ConvWeights};
pub use pool::{channel_pool, channel_pool_vjp, global_avg_pool, global_avg_pool_vjp, PoolMode};
