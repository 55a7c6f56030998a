//! trajaudit: membership-inference privacy auditing for generative
//! trajectory models.
//!
//! The crate trains small GAN and denoising-diffusion targets on fixed-length
//! trajectories, attacks them with white-box membership-inference scores
//! (discriminator logit and negated denoising loss), and summarizes leakage
//! with ROC/AUC. A DP-SGD style defense and a brute-force (ε, δ) verifier for
//! finite mechanisms are included.

// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod dp;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod targets;
pub mod traj;

pub use error::{Error, Result};
