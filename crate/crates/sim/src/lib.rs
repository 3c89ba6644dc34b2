//! Stochastic time-domain simulation of a feedback-cooled mechanical mode.
//!
//! The oscillator is propagated exactly between samples, the controller is
//! a cascade of digital biquads fed by the noisy position record, and
//! spectra are estimated with Welch's method.

pub mod controller;
pub mod error;
pub mod propagator;
pub mod simulate;
pub mod sweep;
pub mod welch;

pub use controller::DiscreteController;
pub use error::{Result, SimError};
pub use propagator::Propagator;
pub use simulate::{simulate, simulate_spectra, simulate_with, SimConfig, SimSpectra, TimeSeries};
pub use sweep::{occupancy_vs_gain_sweep, SweepPoint};
pub use welch::{welch_psd, WelchAccumulator};
