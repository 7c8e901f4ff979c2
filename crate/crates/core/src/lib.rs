//! User-level differentially private mean estimation by Huber loss
//! minimization, with smooth-sensitivity-calibrated Gaussian noise.
//!
//! The pipeline computes per-user means, minimizes a weighted Huber
//! objective with a reweighting fixed-point iteration, clips the result,
//! and adds Gaussian noise whose scale follows a data-dependent smooth
//! sensitivity built from a case split over how concentrated the user
//! means are. A two-stage Winsorized baseline and an experiment harness
//! for MSE comparisons are included.

// `!(x > 0.0)` style comparisons are deliberate: they reject NaN, which
// `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod huber;
pub mod mechanism;
pub mod sensitivity;
mod vecmath;

pub use error::{HlmError, Result};
