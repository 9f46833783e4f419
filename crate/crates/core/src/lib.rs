//! Residual propagation, graph neural tangent kernels and kernel-alignment
//! tools for node classification.

pub mod alignment;
pub mod dataset;
pub mod error;
pub mod gntk;
pub mod graph;
pub mod kernels;
pub mod linalg;
pub mod oracle;
pub mod propagation;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{DataSplit, SparseGraph};
