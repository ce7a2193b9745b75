//! Hyperspectral early-disease detection toolkit.
//!
//! Radiometric calibration, background masking, derivative band screening,
//! red-edge analysis and a spectral-spatial 2D/3D convolutional classifier
//! with non-local attention and squeeze-and-excitation units, built on a
//! small reverse-mode differentiation engine.

pub mod autograd;
pub mod calib;
pub mod error;
pub mod hypercube;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use hypercube::{crop_tiles, load_cube, save_cube, CubeFormat, HyperCube, Tile, TileSet, WavelengthAxis};
pub use spectral::{BandSelection, SgConfig, Spectrum};
