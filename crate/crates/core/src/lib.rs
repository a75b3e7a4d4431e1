//! Batch analysis of NV-diamond quantum diamond microscope data cubes:
//! contrast reduction, per-pixel curve fitting, stress reconstruction and
//! birefringence imaging.

pub mod datacube;
pub mod diagnostics;
pub mod error;
pub mod fitengine;
pub mod models;
pub mod physics;
pub mod rng;
pub mod synth;
pub mod util;

pub use error::{Error, ErrorCategory, Result};
