//! Exact one-step propagation of a damped harmonic oscillator driven by a
//! piecewise-constant force and white thermal noise.

use mimcool_core::MechanicalMode;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};

type Mat2 = [[f64; 2]; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Discrete map (x, v) ↦ Φ(x, v) + Ψ F + w with w drawn from the covariance
/// that keeps the open-loop stationary distribution invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    pub phi: Mat2,
    /// Response to a unit force held over the step.
    pub psi: [f64; 2],
    /// Lower Cholesky factor of the per-step noise covariance.
    chol: Mat2,
    /// Stationary open-loop position variance, m².
    pub variance_x: f64,
}

impl Propagator {
    /// `s_ff` is the single-sided force PSD, N²/Hz.
    pub fn new(mode: &MechanicalMode, s_ff: f64, dt: f64) -> Result<Self> {
        mode.validate()?;
        if !(dt > 0.0) || !(s_ff >= 0.0) {
            return Err(SimError::config("dt must be positive and s_ff non-negative"));
        }
        let (w, g, m) = (mode.omega_m, mode.gamma_m, mode.m_eff);
        if g >= 2.0 * w {
            return Err(SimError::config("propagator requires an underdamped mode"));
        }
        let wd = (w * w - 0.25 * g * g).sqrt();
        let decay = (-0.5 * g * dt).exp();
        let (c, s) = ((wd * dt).cos(), (wd * dt).sin() / wd);
        // e^{At} = e^{−Γt/2} [cos(ω_d t) I + sin(ω_d t)/ω_d (A + Γ/2 I)]
        let phi = [[decay * (c + 0.5 * g * s), decay * s], [-decay * w * w * s, decay * (c - 0.5 * g * s)]];
        // Ψ = A⁻¹(Φ − I) B with B = (0, 1/m)
        let (e01, e11) = (phi[0][1], phi[1][1] - 1.0);
        let psi = [(-g * e01 - e11) / (w * w * m), e01 / m];

        let var_x = s_ff / (4.0 * m * m * w * w * g);
        let p: Mat2 = [[var_x, 0.0], [0.0, w * w * var_x]];
        let pp = mul(&mul(&phi, &p), &transpose(&phi));
        let q = [[p[0][0] - pp[0][0], -pp[0][1]], [-pp[1][0], p[1][1] - pp[1][1]]];
        let l00 = q[0][0].max(0.0).sqrt();
        let l10 = if l00 > 0.0 { q[1][0] / l00 } else { 0.0 };
        let l11 = (q[1][1] - l10 * l10).max(0.0).sqrt();
        Ok(Self { phi, psi, chol: [[l00, 0.0], [l10, l11]], variance_x: var_x })
    }

    /// Draw an initial state from the stationary open-loop distribution.
    pub fn stationary_state<R: Rng>(&self, rng: &mut R, omega_m: f64) -> [f64; 2] {
        let sx = self.variance_x.sqrt();
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        [sx * a, omega_m * sx * b]
    }

    #[inline]
    pub fn step<R: Rng>(&self, state: [f64; 2], force: f64, rng: &mut R) -> [f64; 2] {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        self.step_with(state, force, a, b)
    }

    /// One step with the two unit-normal noise draws supplied.
    #[inline]
    pub fn step_with(&self, state: [f64; 2], force: f64, a: f64, b: f64) -> [f64; 2] {
        let p = &self.phi;
        [
            p[0][0] * state[0] + p[0][1] * state[1] + self.psi[0] * force + self.chol[0][0] * a,
            p[1][0] * state[0] + p[1][1] * state[1] + self.psi[1] * force + self.chol[1][0] * a + self.chol[1][1] * b,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mimcool_core::constants::TWO_PI;

    fn mode() -> MechanicalMode {
        MechanicalMode::new(TWO_PI * 1.3e6, TWO_PI * 1e3, 2e-13, 1e-3).unwrap()
    }

    #[test]
    fn covariance_is_stationary() {
        let m = mode();
        let p = Propagator::new(&m, m.thermal_force_psd(), 2.4e-8).unwrap();
        let pinf: Mat2 = [[p.variance_x, 0.0], [0.0, m.omega_m.powi(2) * p.variance_x]];
        let q = mul(&p.chol, &transpose(&p.chol));
        let next = mul(&mul(&p.phi, &pinf), &transpose(&p.phi));
        for i in 0..2 {
            for j in 0..2 {
                let scale = pinf[i][i].max(pinf[j][j]);
                assert!((next[i][j] + q[i][j] - pinf[i][j]).abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn constant_force_settles_to_static_deflection() {
        let m = mode();
        let p = Propagator::new(&m, 0.0, 2.4e-8).unwrap();
        let mut s = [0.0, 0.0];
        let f = 1e-12;
        for _ in 0..4_000_000 {
            s = p.step_with(s, f, 0.0, 0.0);
        }
        let expected = f / (m.m_eff * m.omega_m.powi(2));
        assert!(((s[0] - expected) / expected).abs() < 1e-6, "{} vs {expected}", s[0]);
    }

    #[test]
    fn matches_free_ringdown() {
        let m = mode();
        let dt = 1e-8;
        let p = Propagator::new(&m, 0.0, dt).unwrap();
        let mut s = [1.0, 0.0];
        let n = 1000;
        for _ in 0..n {
            s = p.step_with(s, 0.0, 0.0, 0.0);
        }
        let t = n as f64 * dt;
        let (w, g) = (m.omega_m, m.gamma_m);
        let wd = (w * w - 0.25 * g * g).sqrt();
        let x = (-0.5 * g * t).exp() * ((wd * t).cos() + 0.5 * g / wd * (wd * t).sin());
        assert!((s[0] - x).abs() < 1e-10);
    }
}
