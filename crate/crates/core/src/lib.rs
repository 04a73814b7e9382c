//! Landmark detection by heatmap regression.
//!
//! The crate covers the whole pipeline: a small dense-tensor engine with
//! reverse-mode differentiation ([`graph`], [`kernels`]), fully
//! convolutional and U-Net regressors ([`nn`]), MSE/Adam training ([`optim`],
//! [`train`]), dataset formation with Gaussian target masks and unshuffled
//! fold plans ([`data`]), and radial-error metrology in physical units
//! ([`eval`]).
//!
//! Learning code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the element type to `f64`, which is what gradient
//! checks and reproducibility guarantees are stated for.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Fault, Gradients, Graph, UpsampleMode, Var};
pub use nn::{Arch, Layer, ModelConfig, NamedParam};
pub use optim::{AdamConfig, AdamState};
pub use scalar::Real;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model = nn::Model<f64>;
pub type Model32 = nn::Model<f32>;
pub type ComputationGraph = graph::Graph<f64>;
