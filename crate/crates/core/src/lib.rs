//! Synthetic MA-XRF generation, spectral embedding and X-ray-to-RGB
//! recolorization.

pub mod color;
pub mod config;
pub mod diff;
pub mod embed;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod palette;
pub mod raster;
pub mod recolor;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
