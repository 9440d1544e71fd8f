//! Patch-based PCA-Net neural operators for the 2D Poisson equation.

pub mod bench;
pub mod error;
pub mod field_data;
mod io;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;
pub mod patching;
pub mod pca;
pub mod pipelines;

pub use error::{Error, ErrorClass, Result};
