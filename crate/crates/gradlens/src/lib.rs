//! Gradient-level analysis of sentence-representation losses.
//!
//! The crate decomposes the anchor gradient of thirteen loss variants into
//! the gradient template
//!
//! ```text
//! dL_i/dh_i = GD * sum_{j != i} W_j * (neg_j - R_j * h_i')
//! ```
//!
//! where `GD` gates the whole gradient, `W_j` distributes mass across
//! negatives, and `R_j` scales the positive's pull. On top of that sit:
//!
//! - [`losses`]: loss values and closed-form anchor gradients;
//! - [`paradigm`]: the GD/W/R decomposition, gradient reconstruction from
//!   components, and a finite-difference gradient checker;
//! - [`simulator`]: Monte-Carlo sweeps of the components over angle-space
//!   distributions (dissipation heatmaps, hardest-negative weight curves,
//!   dynamic-ratio heatmaps);
//! - [`lemma`]: closed form and brute-force oracle for the minimum ratio
//!   that keeps an optimization step attractive, in the tangent-plane model;
//! - [`trainer`]: a toy self-supervised trainer over synthetic data for the
//!   component-role experiments.
//!
//! All randomness flows through the documented generator in [`rng`], so
//! every operation is bit-reproducible for a fixed seed.

pub mod embeddings;
pub mod error;
pub mod lemma;
pub mod losses;
pub mod paradigm;
pub mod rng;
pub mod simulator;
pub mod trainer;
pub(crate) mod vecmath;

pub use error::{Error, Result};
pub use vecmath::Matrix;
