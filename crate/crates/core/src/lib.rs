//! Volumetric lighting from layered scene geometry.
//!
//! Multiplane images built from stereo input are resampled into a nested
//! multiscale RGBA volume, which is then rendered into spherical environment
//! maps at arbitrary points for relighting virtual objects.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod mpi;
pub mod relight;
pub mod render;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
