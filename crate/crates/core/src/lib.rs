//! Log-barrier-extension training for inequality-constrained differentiable
//! models, with penalty and Lagrangian baselines, convex duality-gap
//! certification, and a synthetic weakly supervised segmentation benchmark.

pub mod autodiff;
pub mod cli;
pub mod barrier;
pub mod constraints;
pub mod error;
pub mod optimize;
pub mod segbench;
pub mod verify;

pub use error::{Error, Result};
