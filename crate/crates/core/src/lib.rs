//! Reconstruction of stochastic drift fields from samples of their invariant
//! measure.
//!
//! The pipeline learns the score of the invariant density with multi-scale
//! denoising score matching ([`score`]), then trains a velocity network under
//! the score-based stationary Fokker-Planck constraint with a stochastic
//! augmented Lagrangian method ([`velocity`]). [`dynamics`] supplies the
//! benchmark systems and Euler-Maruyama data generation, and [`evaluation`]
//! compares invariant densities and drift fields.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod rng;
pub mod score;
pub mod velocity;

pub use error::{Error, Result};
