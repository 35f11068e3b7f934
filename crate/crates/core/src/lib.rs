//! Spectral and paradifferential diagnostics for hyperbolic dynamics on tori.
//!
//! The crate is organized bottom-up:
//!
//! * [`field`] and [`spectral`]: sampled periodic fields, FFTs, dyadic
//!   (Littlewood–Paley) blocks and regularity regression.
//! * [`parax`]: paraproducts, the Bony remainder, rough symbols and their
//!   quantization.
//! * [`dynamics`]: cat maps, area-preserving perturbations, suspensions,
//!   Jacobian cocycles, expansion rates and smooth frames.
//! * [`bundle`]: the unstable bundle as a fixed point of the graph transform,
//!   with a Riccati validator.
//! * [`microlocal`]: cone energies, wavefront tests and threshold margins.
//! * [`resonance`]: escape weights and weighted transfer operator spectra.
//! * [`pipeline`]: configuration, orchestration and report emission.

pub mod bundle;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod microlocal;
pub mod parax;
pub mod pfld;
pub mod pipeline;
pub mod resonance;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{Dtype, FourierSeries, Grid, PeriodicField, ValueShape};
