//! Reservoir computers with diagonal recurrence, their trained closed-loop
//! spectra, DMD correspondences and dominance certificates.

pub mod dominance;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod reservoir;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
