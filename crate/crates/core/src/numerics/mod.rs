//! Minimal tensor library: reverse-mode autodiff, convolution layers, Adam,
//! binary checkpoints and the diagonal-Gaussian helpers of the VAE.

pub mod checkpoint;
pub mod gaussian;
pub mod graph;
mod kernels;
pub mod params;
pub mod rng;
pub mod tensor;

pub use checkpoint::TensorMap;
pub use gaussian::{gaussian_kl, gaussian_kl_grad, reparameterize, LatentDistribution, LOGVAR_MAX, LOGVAR_MIN};
pub use graph::{Activation, Graph, Var};
pub use params::{adam_step, AdamConfig, Parameter, ParameterStore};
pub use rng::Rng;
pub use tensor::Tensor;
