//! Hierarchical recurrent supervised-autoencoder fault detection and
//! diagnosis for continuous process plants.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod hierarchy;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod plant;
pub mod prbs;
pub mod softmax;
pub mod tensor;
pub mod tune;

pub use batch::{WindowBatch, WindowOrigin};
pub use error::{FddError, Result};
pub use model::{ModelConfig, TrainedModel};
pub use params::ParamSet;
pub use tensor::Tensor2;
