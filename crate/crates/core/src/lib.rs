//! Convolutional classifier training with an auxiliary pose-regression head.
//!
//! A baseline CNN is trained on class labels with the softmax log-loss. The
//! pose-aware variant attaches a linear head to a hidden layer that regresses
//! the target's rotation as a quaternion and adds `λ ·` the summed rotation
//! distance to the objective. After training the head is stripped, leaving a
//! network with exactly the baseline architecture.
//!
//! Everything runs in `f64` on the CPU and is bitwise reproducible for a
//! given seed.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod network;
pub mod pose;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
