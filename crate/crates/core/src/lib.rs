//! L1 adaptive augmentation for model-based reinforcement learning.
//!
//! A learned ensemble dynamics model is affinized in the input around an
//! anchor, and a discrete L1 controller wraps the baseline MPC policy to
//! reject model mismatch and disturbances.

pub mod affine;
pub mod cli;
pub mod dynmodel;
pub mod envsim;
pub mod error;
pub mod l1core;
pub mod mbrl;
pub mod model;
pub mod seeding;
pub mod verify;

pub use error::{Error, Result};
pub use model::{DynamicsModel, Matrix, Vector};
