//! Desk-scale diffusion segmentation with classical edge priors: prior
//! extraction, parameter-free boundary injection into the first denoiser
//! stage, a multi-scale boundary-informed training objective, the four
//! standard evaluation metrics, and the data/CLI plumbing to ablate all of it.

pub mod scalar;
pub mod grid;
pub mod tape;
pub mod edge;
pub mod inject;
pub mod loss;
pub mod diffusion;
pub mod metrics;
pub mod data;
pub mod config;
pub mod runner;

/// Concrete 64-bit field used by everything gradient-related.
pub type Grid = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type FeatureMap = grid::FeatureMap<f64>;
pub type Kernel3x3 = grid::Kernel3x3<f64>;

pub use grid::GridError;
pub use tape::{Gradients, Tape, TapeError, Var};
