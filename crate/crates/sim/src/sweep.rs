//! Occupancy against gain from simulation and from the loop model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simulate::{segment_for_resolution, simulate_spectra, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gain: f64,
    /// Occupancy from the simulated out-of-loop spectrum.
    pub n_sim: f64,
    /// Occupancy from the integrated closed-loop model spectrum.
    pub n_model: f64,
}

/// Simulate each gain with its own generator (seed offset by the gain
/// index) and pair the simulated occupancy with the model prediction.
pub fn occupancy_vs_gain_sweep(config: &SimConfig, gains: &[f64]) -> Result<Vec<SweepPoint>> {
    gains
        .par_iter()
        .enumerate()
        .map(|(i, &gain)| {
            let mut cfg = config.with_gain(gain);
            cfg.seed = config.seed.wrapping_add(i as u64);
            let cfg = cfg.with_settling(20.0);
            let model = cfg.model()?;
            if !model.is_stable() {
                return Err(SimError::Model(mimcool_core::Error::Unstable(format!(
                    "gain {gain} is outside the stable region"
                ))));
            }
            let segment = segment_for_resolution(&cfg, 30.0)?.min(cfg.steps().next_power_of_two() / 2);
            let spectra = simulate_spectra(&cfg, segment, 0.5)?;
            // The Welch grid spans DC to Nyquist, so the whole band is integrated
            // directly; the resonance-tail model is only needed on model grids.
            let n_sim = spectra.x.integrate() / (2.0 * cfg.mode.x_zpf().powi(2)) - 0.5;
            Ok(SweepPoint { gain, n_sim, n_model: model.occupancy()? })
        })
        .collect()
}
