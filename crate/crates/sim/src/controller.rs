//! Digital realization of the feedback filter: bilinear biquad cascades,
//! an integer-sample delay line and a zero-order-hold output.
//!
//! A constant complex stage weight c cannot be realized by a real filter.
//! It is split as Re c · R(s) + Im c · (Ω_t/s) R(s), which reproduces c
//! exactly at the match frequency Ω_t and to first order in (Ω − Ω_t)/Ω_t
//! around it.

use std::collections::VecDeque;

use mimcool_core::feedback::{FeedbackFilter, LoopFilter};
use num_complex::Complex64;

use crate::error::{Result, SimError};

/// Transposed direct-form-II biquad with a₀ = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    /// Bilinear image of (b0 s² + b1 s + b2)/(s² + a1 s + a2), prewarped so
    /// the analog and digital responses agree at `warp` (rad/s).
    pub fn bilinear(analog_b: [f64; 3], analog_a: [f64; 2], warp: f64, dt: f64) -> Self {
        let k = warp / (0.5 * warp * dt).tan();
        let k2 = k * k;
        let [b0, b1, b2] = analog_b;
        let [a1, a2] = analog_a;
        let d0 = k2 + a1 * k + a2;
        Self {
            b: [(b0 * k2 + b1 * k + b2) / d0, 2.0 * (b2 - b0 * k2) / d0, (b0 * k2 - b1 * k + b2) / d0],
            a: [2.0 * (a2 - k2) / d0, (k2 - a1 * k + a2) / d0],
            s1: 0.0,
            s2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Frequency response; one sample of delay is e^{+iω·dt}.
    pub fn response(&self, omega: f64, dt: f64) -> Complex64 {
        let u = Complex64::from_polar(1.0, omega * dt);
        let num = self.b[0] + u * (self.b[1] + u * self.b[2]);
        let den = 1.0 + u * (self.a[0] + u * self.a[1]);
        num / den
    }
}

/// Γs/(s² + Γs + Ω0²), the real part of the analog bandpass up to a factor i.
fn bandpass_biquad(center: f64, bandwidth: f64, warp: f64, dt: f64) -> Biquad {
    Biquad::bilinear([0.0, bandwidth, 0.0], [bandwidth, center * center], warp, dt)
}

/// ΓΩ_t/(s² + Γs + Ω0²), the bandpass followed by Ω_t/s.
fn quadrature_biquad(center: f64, bandwidth: f64, warp: f64, dt: f64) -> Biquad {
    Biquad::bilinear([0.0, 0.0, bandwidth * warp], [bandwidth, center * center], warp, dt)
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    chain: Vec<Biquad>,
    in_phase: Biquad,
    quadrature: Biquad,
    weight: Complex64,
}

impl Stage {
    fn new(center: f64, bandwidth: f64, order: u32, weight: Complex64, warp: f64, dt: f64) -> Self {
        Self {
            chain: (1..order).map(|_| bandpass_biquad(center, bandwidth, warp, dt)).collect(),
            in_phase: bandpass_biquad(center, bandwidth, warp, dt),
            quadrature: quadrature_biquad(center, bandwidth, warp, dt),
            weight,
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let v = self.chain.iter_mut().fold(x, |acc, b| b.process(acc));
        self.weight.re * self.in_phase.process(v) + self.weight.im * self.quadrature.process(v)
    }

    fn response(&self, omega: f64, dt: f64) -> Complex64 {
        let common: Complex64 = self.chain.iter().map(|b| b.response(omega, dt)).product();
        common
            * (self.in_phase.response(omega, dt) * self.weight.re
                + self.quadrature.response(omega, dt) * self.weight.im)
    }
}

/// Zero-order hold seen from the sampled input: e^{iωdt/2}·sinc(ωdt/2).
fn zoh(omega: f64, dt: f64) -> Complex64 {
    let h = 0.5 * omega * dt;
    let sinc = if h == 0.0 { 1.0 } else { h.sin() / h };
    Complex64::from_polar(sinc, h)
}

/// Sampled controller producing the feedback signal (before calibration)
/// from the measured displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteController {
    pub filter: FeedbackFilter,
    /// Frequency at which the main stage is matched to the analog filter.
    pub omega_target: f64,
    pub dt: f64,
    /// Whole samples of delay between input and held output.
    pub delay_samples: usize,
    stages: Vec<Stage>,
    line: VecDeque<f64>,
}

impl DiscreteController {
    pub fn new(filter: &FeedbackFilter, omega_target: f64, dt: f64) -> Result<Self> {
        filter.validate()?;
        if !(dt > 0.0) || !(omega_target > 0.0) {
            return Err(SimError::config("dt and target frequency must be positive"));
        }
        let nyquist = std::f64::consts::PI / dt;
        let top = filter.aux_stages.iter().map(|a| a.center).fold(filter.main_center.max(omega_target), f64::max);
        if top >= 0.5 * nyquist {
            return Err(SimError::config(format!(
                "filter centre {top:e} rad/s is too close to the Nyquist frequency {nyquist:e} rad/s"
            )));
        }
        // The hold adds dt/2 of delay; the rest goes to the delay line.
        let wanted = filter.delay - 0.5 * dt;
        let delay_samples = (wanted / dt).round().max(0.0) as usize;
        let residual = wanted - delay_samples as f64 * dt;

        // Fold the residual delay and the hold's magnitude droop into each
        // stage weight at its own match frequency.
        let correction = |w: f64| Complex64::from_polar(1.0, w * residual) / zoh(w, dt).norm();
        let mut stages = Vec::with_capacity(1 + filter.aux_stages.len());
        // i² from the squared bracket
        let main = -Complex64::from_polar(filter.gain, -filter.phase_offset) * correction(omega_target);
        stages.push(Stage::new(filter.main_center, filter.main_bandwidth, 2, main, omega_target, dt));
        for a in &filter.aux_stages {
            let w = Complex64::from_polar(filter.gain * a.gain, -a.phase)
                * Complex64::i().powu(a.order)
                * correction(a.center);
            stages.push(Stage::new(a.center, a.bandwidth, a.order, w, a.center, dt));
        }
        Ok(Self {
            filter: filter.clone(),
            omega_target,
            dt,
            delay_samples,
            stages,
            line: VecDeque::from(vec![0.0; delay_samples]),
        })
    }

    /// Feed one input sample; returns the output to hold over the next step.
    #[inline]
    pub fn step(&mut self, y: f64) -> f64 {
        let u: f64 = self.stages.iter_mut().map(|s| s.process(y)).sum();
        if self.delay_samples == 0 {
            return u;
        }
        self.line.push_back(u);
        self.line.pop_front().unwrap_or(0.0)
    }

    pub fn reset(&mut self) {
        *self = Self::new(&self.filter, self.omega_target, self.dt).expect("validated at construction");
    }
}

impl LoopFilter for DiscreteController {
    /// Continuous-time equivalent response, including delay line and hold.
    fn response(&self, omega: f64) -> Complex64 {
        let sum: Complex64 = self.stages.iter().map(|s| s.response(omega, self.dt)).sum();
        sum * Complex64::from_polar(1.0, omega * self.dt * self.delay_samples as f64) * zoh(omega, self.dt)
    }

    fn gain(&self) -> f64 {
        self.filter.gain
    }

    fn with_gain(&self, gain: f64) -> Self {
        let filter = self.filter.with_gain(gain);
        Self::new(&filter, self.omega_target, self.dt).expect("validated at construction")
    }

    fn features(&self) -> Vec<(f64, f64)> {
        self.filter.features()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mimcool_core::constants::TWO_PI;
    use mimcool_core::feedback::AuxStage;

    fn paper_like() -> FeedbackFilter {
        FeedbackFilter {
            gain: 3.0,
            phase_offset: 0.7,
            delay: 300e-9,
            main_center: TWO_PI * 1.34e6,
            main_bandwidth: TWO_PI * 78e3,
            aux_stages: vec![AuxStage {
                center: TWO_PI * 2.1e6,
                bandwidth: TWO_PI * 20e3,
                gain: 0.1,
                phase: 1.2,
                order: 1,
            }],
        }
    }

    #[test]
    fn exact_at_match_frequency() {
        let f = paper_like();
        let dt = 1.0 / (32.0 * 1.3e6);
        let w = TWO_PI * 1.3e6;
        let c = DiscreteController::new(&f.without_aux(), w, dt).unwrap();
        let (got, want) = (c.response(w), f.without_aux().response(w));
        assert!((got - want).norm() < 1e-9 * want.norm(), "{got} vs {want}");
    }

    #[test]
    fn close_to_analog_near_resonance() {
        let f = paper_like();
        let dt = 1.0 / (32.0 * 1.3e6);
        let c = DiscreteController::new(&f, TWO_PI * 1.3e6, dt).unwrap();
        for df in [-50e3, -10e3, 0.0, 10e3, 50e3] {
            let w = TWO_PI * (1.3e6 + df);
            let (got, want) = (c.response(w), f.response(w));
            assert!((got - want).norm() < 0.05 * want.norm(), "{df}: {got} vs {want}");
        }
    }

    #[test]
    fn impulse_response_matches_frequency_response() {
        let f = paper_like();
        let dt = 1.0 / (32.0 * 1.3e6);
        let mut c = DiscreteController::new(&f, TWO_PI * 1.3e6, dt).unwrap();
        let n = 1 << 16;
        let h: Vec<f64> = (0..n).map(|k| c.step(if k == 0 { 1.0 } else { 0.0 })).collect();
        for w in [TWO_PI * 1.1e6, TWO_PI * 1.3e6, TWO_PI * 2.1e6] {
            let dtft: Complex64 = h.iter().enumerate().map(|(k, &v)| Complex64::from_polar(v, w * dt * k as f64)).sum();
            let model = c.response(w) / zoh(w, dt);
            assert!((dtft - model).norm() < 1e-6 * model.norm(), "{dtft} vs {model}");
        }
    }

    #[test]
    fn rejects_filter_near_nyquist() {
        let f = paper_like();
        assert!(DiscreteController::new(&f, TWO_PI * 1.3e6, 1.0 / (3.0 * 1.3e6)).is_err());
    }
}
