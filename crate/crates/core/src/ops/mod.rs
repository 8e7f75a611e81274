//! Numeric kernels behind the graph primitives.

pub mod conv;
pub mod upsample;
