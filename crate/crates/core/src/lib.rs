//! Covariant fidelity quantum kernels on an exact statevector simulator.
//!
//! The crate covers circuit simulation with synthetic readout noise,
//! coupling-aware covariant feature maps, bit-flip-tolerant kernel
//! estimation and calibration, kernel alignment with SPSA, a precomputed
//! kernel SVM, synthetic data generators and numerical checks of the
//! underlying theory.

pub mod align;
pub mod data;
pub mod error;
pub mod featuremap;
pub mod kernel;
pub mod linalg;
pub mod seed;
pub mod sim;
pub mod svc;
pub mod theory;

pub use error::{Error, Result};
