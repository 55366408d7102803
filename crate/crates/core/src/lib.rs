//! Horizon activation maps for multivariate forecasting models.
//!
//! The crate trains small forecasting models on a minimal reverse-mode
//! autodiff tape, computes causal and anti-causal gradient-norm curves over
//! the forecast horizon ([`ham`]), derives area, difference and equivariant
//! point analytics from them ([`analytics`]), and serializes everything as
//! JSON trace files and SVG plots ([`trace`], [`render`]).

pub mod analytics;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod ham;
pub mod model;
pub mod render;
pub mod tensor;
pub mod trace;
pub mod train;

pub use error::{Error, Result};

/// SplitMix64 finalizer; derives independent stream seeds from a base seed
/// and an index (epoch, batch, ...).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
