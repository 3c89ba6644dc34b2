//! Models, limits, closed-loop spectra and estimators for laser cooling of
//! a membrane-in-the-middle optomechanical system.
//!
//! Internally every rate and frequency is angular (rad/s) and every other
//! quantity is SI. Spectra carry ordinary frequency grids (Hz) because that
//! is how they are measured and stored; single-sided PSDs are per Hz.

pub mod backaction;
pub mod constants;
pub mod error;
pub mod feedback;
pub mod limits;
pub mod lsq;
pub mod params;
pub mod spectral_fit;
pub mod spectrum;
pub mod tin;

pub use error::{Error, Result};
pub use lsq::FitResult;
pub use params::{
    BeamRole, CouplingConfig, DetectionChain, FiberLossConvention, MechanicalMode, ModeQuantities, OpticalBeam,
    OpticalCavity,
};
pub use spectrum::{FrequencyGrid, Spectrum};
