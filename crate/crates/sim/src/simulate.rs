//! Langevin simulation of the closed loop.

use mimcool_core::constants::{HBAR, K_B, TWO_PI};
use mimcool_core::feedback::{tune_phase, unit_gain_calibration, FeedbackFilter, LoopModel};
use mimcool_core::limits::Quanta;
use mimcool_core::spectrum::{MetersSq, Spectrum};
use mimcool_core::MechanicalMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::DiscreteController;
use crate::error::{Result, SimError};
use crate::propagator::Propagator;
use crate::welch::WelchAccumulator;

/// Samples per mechanical period below which the loop discretization is
/// considered too coarse.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 20.0;

/// Excursions beyond this many open-loop RMS amplitudes count as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Step, s.
    pub dt: f64,
    /// Recorded duration, s.
    pub duration: f64,
    /// Initial interval discarded before recording, s.
    #[serde(default)]
    pub settle: f64,
    pub seed: u64,
    /// Mode including backaction shifts.
    pub mode: MechanicalMode,
    pub filter: FeedbackFilter,
    /// Filter output to force, N/m.
    pub calibration: f64,
    /// N²/Hz, single-sided.
    pub s_ff_tot: f64,
    /// m²/Hz, single-sided.
    pub s_xx_imp: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.filter.validate()?;
        if !(self.dt > 0.0) || !(self.duration > 0.0) || !(self.settle >= 0.0) {
            return Err(SimError::config("dt and duration must be positive, settle non-negative"));
        }
        let per_period = TWO_PI / (self.mode.omega_m * self.dt);
        if per_period < MIN_SAMPLES_PER_PERIOD {
            return Err(SimError::config(format!(
                "dt = {:e} s gives {per_period:.1} samples per period (need {MIN_SAMPLES_PER_PERIOD})",
                self.dt
            )));
        }
        if self.duration < self.dt * 16.0 {
            return Err(SimError::config("duration shorter than 16 steps"));
        }
        if !(self.calibration > 0.0) || !(self.s_ff_tot >= 0.0) || !(self.s_xx_imp >= 0.0) {
            return Err(SimError::config("calibration must be positive and noise PSDs non-negative"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn settle_steps(&self) -> usize {
        (self.settle / self.dt).round() as usize
    }

    /// Frequency-domain model of the ideal analog loop.
    pub fn model(&self) -> Result<LoopModel<FeedbackFilter>> {
        Ok(LoopModel::new(self.mode, self.filter.clone(), self.calibration, self.s_ff_tot, self.s_xx_imp)?)
    }

    /// Frequency-domain model of the loop as discretized in the simulation.
    pub fn discrete_model(&self) -> Result<LoopModel<DiscreteController>> {
        let c = DiscreteController::new(&self.filter, self.mode.omega_m, self.dt)?;
        Ok(LoopModel::new(self.mode, c, self.calibration, self.s_ff_tot, self.s_xx_imp)?)
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        Self { filter: FeedbackFilter { gain, ..self.filter.clone() }, ..self.clone() }
    }

    /// Settling interval of `time_constants` closed-loop amplitude decay
    /// times, falling back to the open-loop damping when unstable.
    pub fn with_settling(mut self, time_constants: f64) -> Self {
        let g =
            self.discrete_model().map(|m| m.effective_damping()).ok().filter(|g| *g > 0.0).unwrap_or(self.mode.gamma_m);
        self.settle = time_constants * 2.0 / g;
        self
    }

    /// A scaled-down desk scenario: 1.3 MHz mode, 1 kHz linewidth, total
    /// force noise of 10⁴ quanta, imprecision of 25 quanta and a broad
    /// bandpass controller tuned for damping at the mode.
    pub fn desk(gain: f64, seed: u64) -> Result<Self> {
        let omega = TWO_PI * 1.3e6;
        let n_th = 1e4;
        let temperature = n_th * HBAR * omega / K_B;
        let mode = MechanicalMode::new(omega, TWO_PI * 1e3, 2e-13, temperature)?;
        let q = Quanta::for_mode(&mode);
        let mut filter = FeedbackFilter {
            gain,
            phase_offset: 0.0,
            delay: 100e-9,
            main_center: omega,
            main_bandwidth: TWO_PI * 600e3,
            aux_stages: Vec::new(),
        };
        filter.phase_offset = tune_phase(&filter, omega)?;
        let calibration = unit_gain_calibration(&mode, &filter)?;
        Ok(Self {
            dt: 1.0 / (32.0 * 1.3e6),
            duration: 0.1,
            settle: 0.0,
            seed,
            mode,
            filter,
            calibration,
            s_ff_tot: q.quanta_to_force(n_th + 0.5),
            s_xx_imp: q.quanta_to_imprecision(25.0),
        }
        .with_settling(20.0))
    }
}

/// Sampled displacement x and in-loop signal y = x + x_imp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn variance_x(&self) -> f64 {
        let n = self.x.len() as f64;
        let mean = self.x.iter().sum::<f64>() / n;
        self.x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Run the loop, calling `sink(x, y)` for every recorded sample.
pub fn simulate_with(config: &SimConfig, mut sink: impl FnMut(f64, f64)) -> Result<()> {
    config.validate()?;
    let prop = Propagator::new(&config.mode, config.s_ff_tot, config.dt)?;
    let mut controller = DiscreteController::new(&config.filter, config.mode.omega_m, config.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sigma_imp = (config.s_xx_imp / (2.0 * config.dt)).sqrt();
    let limit = DIVERGENCE_FACTOR * prop.variance_x.sqrt().max(f64::MIN_POSITIVE);

    let mut state = prop.stationary_state(&mut rng, config.mode.omega_m);
    let skip = config.settle_steps();
    let total = skip + config.steps();
    for k in 0..total {
        let x = state[0];
        if !(x.abs() <= limit) {
            return Err(SimError::Diverged { sample: k, time: k as f64 * config.dt, value: x.abs() });
        }
        let noise: f64 = rng.sample(StandardNormal);
        let y = x + sigma_imp * noise;
        let force = config.calibration * controller.step(y);
        if k >= skip {
            sink(x, y);
        }
        state = prop.step(state, force, &mut rng);
    }
    Ok(())
}

/// Simulate and record the full displacement and in-loop series.
pub fn simulate(config: &SimConfig) -> Result<TimeSeries> {
    let n = config.steps();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    simulate_with(config, |a, b| {
        x.push(a);
        y.push(b);
    })?;
    Ok(TimeSeries { dt: config.dt, x, y })
}

/// Spectra of a run estimated on the fly, without storing the series.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSpectra {
    pub x: Spectrum<MetersSq>,
    pub y: Spectrum<MetersSq>,
    /// Sample variance of x, m².
    pub variance_x: f64,
    pub samples: usize,
}

/// Simulate and return Welch PSDs of x and y.
pub fn simulate_spectra(config: &SimConfig, segment: usize, overlap: f64) -> Result<SimSpectra> {
    if segment > config.steps() {
        return Err(SimError::config(format!(
            "Welch segment {segment} longer than the {} recorded samples",
            config.steps()
        )));
    }
    let mut wx = WelchAccumulator::new(segment, overlap, config.dt)?;
    let mut wy = WelchAccumulator::new(segment, overlap, config.dt)?;
    let (mut n, mut sum, mut sum2) = (0usize, 0.0, 0.0);
    simulate_with(config, |x, y| {
        wx.push(x);
        wy.push(y);
        n += 1;
        sum += x;
        sum2 += x * x;
    })?;
    let mean = sum / n as f64;
    Ok(SimSpectra { x: wx.finish()?, y: wy.finish()?, variance_x: sum2 / n as f64 - mean * mean, samples: n })
}

/// Smallest power-of-two segment resolving the closed-loop linewidth of
/// `config` with at least `per_width` bins.
pub fn segment_for_resolution(config: &SimConfig, per_width: f64) -> Result<usize> {
    let g = config.discrete_model()?.effective_damping();
    if !(g > 0.0) {
        return Err(SimError::config("loop is unstable; no linewidth to resolve"));
    }
    let bins = per_width * TWO_PI / (g * config.dt);
    Ok((bins.ceil() as usize).next_power_of_two())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(gain: f64, seed: u64) -> SimConfig {
        SimConfig { duration: 2e-3, ..SimConfig::desk(gain, seed).unwrap() }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate(&short(5.0, 3)).unwrap();
        let b = simulate(&short(5.0, 3)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&short(5.0, 4)).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn series_lengths_match() {
        let cfg = short(1.0, 1);
        let ts = simulate(&cfg).unwrap();
        assert_eq!(ts.x.len(), cfg.steps());
        assert_eq!(ts.y.len(), ts.x.len());
        assert!(ts.x.iter().chain(&ts.y).all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_coarse_step() {
        let cfg = SimConfig { dt: 1.0 / (10.0 * 1.3e6), ..short(0.0, 0) };
        assert!(matches!(simulate(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn anti_damping_diverges() {
        let mut cfg = short(3.0, 9);
        cfg.filter.phase_offset += std::f64::consts::PI;
        cfg.settle = 0.0;
        cfg.duration = 0.05;
        assert!(!cfg.discrete_model().unwrap().is_stable());
        match simulate(&cfg) {
            Err(SimError::Diverged { sample, .. }) => assert!(sample > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
