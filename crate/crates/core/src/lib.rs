//! Semi-supervised learning with deep generative models.
//!
//! The latent-feature model (M1), the generative semi-supervised model (M2)
//! and their stack, trained by stochastic gradient variational Bayes on a
//! small dense-tensor and MLP layer written for the purpose.

pub mod cli;
pub mod data;
pub mod dists;
pub mod error;
pub mod eval;
pub mod image;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
