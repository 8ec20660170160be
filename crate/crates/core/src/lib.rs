//! Cross-modal representation learning for vision-based gate racing.
//!
//! The crate is a self-contained pipeline:
//!
//! - [`numerics`]: a small tensor library with reverse-mode autodiff, the
//!   layers the models need, Adam, and the Gaussian/KL machinery.
//! - [`scene`]: procedural gate scenes, a software rasterizer and the
//!   labelled image/pose datasets.
//! - [`cmvae`]: the cross-modal VAE (constrained and unconstrained latent
//!   layouts), a plain image VAE and a direct pose regressor.
//! - [`expert`]: a minimum-jerk planner with a pure-pursuit tracker that
//!   produces demonstrations.
//! - [`policy`]: behavior-cloning heads over each feature extractor.
//! - [`simulator`]: kinematic closed-loop evaluation on randomized tracks.
//! - [`cli`]: experiment configuration and the command-line entry points.

pub mod cli;
pub mod cmvae;
pub mod error;
pub mod expert;
pub mod numerics;
pub mod policy;
pub mod scene;
pub mod simulator;

pub use error::{Error, Result};
