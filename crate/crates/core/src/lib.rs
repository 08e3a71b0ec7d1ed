//! Continual-learning surrogate for ocean acoustic transmission loss.
//!
//! A ray-based solver produces ground-truth transmission-loss fields over
//! range-dependent bathymetry. A convolutional encoder-decoder learns to map a
//! rasterized bathymetry mask to the field in one forward pass, and is trained
//! over a sequence of bathymetry families with exemplar replay so that earlier
//! families are not forgotten.

pub mod acoustics;
pub mod bathymetry;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scenario;
pub mod tensor;
pub mod tlf;
pub mod trainer;

pub use error::{Error, Result};
