//! Numeric substrate: dense `f64` matrices, a named parameter registry with
//! gradient accumulators, hand-written reverse-mode kernels for the operators
//! the encoder needs, Adam, finite-difference gradient checking and PCA.

mod adam;
mod gradcheck;
mod matrix;
pub mod ops;
mod pca;
mod tape;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use matrix::{dot, Matrix};
pub use pca::{pca_fit_transform, Pca};
pub use tape::{ParamId, ParamTape};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("requested {k} components from data with {rows} rows and {cols} columns")]
    ComponentsOutOfRange { k: usize, rows: usize, cols: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
