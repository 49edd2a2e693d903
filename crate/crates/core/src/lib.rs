//! 2D-to-3D human pose lifting with a double-chain graph-convolutional
//! transformer (DC-GCT).
//!
//! The crate is self-contained: a dense tensor engine with reverse-mode
//! differentiation ([`tensor`]), the skeleton graph and its four-category
//! adjacency decomposition ([`skeleton`]), the double-chain network itself
//! ([`model`]), training facilities ([`train`]), pose evaluation protocols
//! ([`metrics`]), and dataset I/O plus a synthetic pose generator ([`data`]).
//!
//! Training and inference default to `f32`; gradient checking runs the same
//! code in `f64` (see [`tensor::grad_check`]).

pub mod data;
pub mod metrics;
pub mod model;
pub mod skeleton;
pub mod tensor;
pub mod train;


pub use model::{DcGct, ModelConfig, ModelVariant};
pub use skeleton::SkeletonTopology;
pub use tensor::{Tape, Tensor, Value};
