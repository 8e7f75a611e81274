//! Dense optical flow with a cascade of dilated-convolution sub-networks.

pub mod augment;
pub mod erf;
pub mod error;
pub mod flow_io;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Shape4, Tensor4};
