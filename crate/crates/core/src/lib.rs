//! Diffusion-based samplers for unnormalized densities with learnable
//! Gaussian and Gaussian-mixture priors.

pub mod checkpoint;
pub mod controls;
pub mod dynamics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod optim;
mod linalg;
pub mod priors;
pub mod refinement;
pub mod rng;
pub mod smc;
pub mod targets;
pub mod training;

pub use error::{Error, Result};
