//! Few-shot radiance-field reconstruction with iterative self-training.
//!
//! The library is organized around a small set of subsystems:
//!
//! * [`geometry`] — pinhole cameras, ray/cone generation and depth-based
//!   forward warping between views.
//! * [`encoding`] — frequency positional encoding and its integrated
//!   variant over conical frustums.
//! * [`field`] — the uncertainty-aware radiance field MLP with its
//!   embedding tables, reverse-mode gradients and Adam updates.
//! * [`render`] — stratified cone sampling and quadrature compositing of
//!   color, uncertainty, variance and depth along rays.
//! * [`loss`] — negative log-likelihood, pseudo-view and cone-entropy
//!   objectives with their weight schedules.
//! * [`pseudo`] — manufacture of warped and predicted pseudo-views at
//!   unseen poses from a trained checkpoint.
//! * [`selftrain`] — the iterative teacher/student loop with
//!   validation-based convergence detection.
//! * [`toy`] — a 1-D regression testbed for the self-training step.
//! * [`metrics`] — PSNR / SSIM image quality metrics.
//! * [`dataset`] — scene loading, analytic oracle scenes and run output.

pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod field;
pub mod geometry;
pub mod img;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pseudo;
pub mod render;
pub mod seed;
pub mod selftrain;
pub mod toy;
pub mod train;

pub use error::{CoreError, Result};
pub use geometry::{Camera, DepthMap, Ray, WarpedView};
pub use img::Image;
