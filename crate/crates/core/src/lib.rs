//! Body-joint guided pooling of 3D convolutional feature maps.
//!
//! The crate maps annotated body joints into the feature maps of a
//! C3D-style network, pools activations at those points (directly or as a
//! bilinear product with heat maps), aggregates clip features into video
//! descriptors, and trains the two-stream attention/feature model that
//! learns the pooling weights end to end.

pub mod aggregate;
pub mod classify;
pub mod cli;
pub mod datakit;
pub mod error;
pub mod gradcheck;
pub mod jointmap;
pub mod net3d;
pub mod pipeline;
pub mod poolgen;
pub mod report;
pub mod tensor;
pub mod twostream;

pub use error::{Error, Result};
pub use tensor::{l2_normalize, matmul, Matrix, Tensor};
