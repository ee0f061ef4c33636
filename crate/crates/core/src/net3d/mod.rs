//! 3D convolutional networks: declarative configs, layer kernels with
//! analytic backward passes, and a sequential network runner.

pub mod config;
pub mod layers;
pub mod network;

pub use config::{c3d_family, output_shape, LayerKind, LayerSpec, NetworkConfig, Shape, Window};
pub use network::{network_fwd, Gradients, LayerParams, Network, Trace};
