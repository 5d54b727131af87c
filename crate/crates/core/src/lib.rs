//! Multi-temporal crop-type segmentation with a 3D fully convolutional
//! encoder-decoder, a soft IoU loss and a cross-entropy baseline.
//!
//! Every numerical kernel and its gradient is implemented here directly on
//! dense row-major tensors; see [`ndtensor`].

pub mod datapipe;
pub mod error;
pub mod fcn3d;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod ndtensor;
pub mod optim;

pub use error::{Error, Result};
pub use fcn3d::{ArchitectureConfig, NetworkModel};
pub use ndtensor::{Scalar, Tensor};
