//! Closed-form cooling limits for sideband and feedback cooling, the
//! displacement imprecision budget, and conversions between spectral
//! densities and quanta.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::params::MechanicalMode;

/// A phonon occupancy as produced by an analytic formula. Values below
/// zero are kept, since they mark evaluation outside the formula's range
/// of validity rather than a numerical artefact.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Occupancy(pub f64);

impl Occupancy {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_physical(self) -> bool {
        self.0 >= 0.0
    }

    /// Value clipped at zero, for display only.
    pub fn clamped(self) -> f64 {
        self.0.max(0.0)
    }
}

/// Steady-state occupancy of a mode cooled by a sideband beam while a
/// probe adds quantum backaction at cooperativity `c_q`.
pub fn sideband_occupancy(
    n_th: f64,
    gamma_m: f64,
    c_q: f64,
    n_min_c: f64,
    gamma_c: f64,
    gamma_tot: f64,
) -> Result<Occupancy> {
    if !(gamma_tot > 0.0) {
        return Err(Error::Unstable(format!("total damping {gamma_tot:e} rad/s must be positive")));
    }
    require_non_negative("n_th", n_th)?;
    require_non_negative("c_q", c_q)?;
    Ok(Occupancy((n_th * gamma_m * (1.0 + c_q) + n_min_c * gamma_c) / gamma_tot))
}

/// Backaction-limited occupancy for strong sideband cooling at detuning
/// `delta` < 0.
pub fn min_sideband_occupancy(delta: f64, kappa: f64, omega_m: f64) -> Result<Occupancy> {
    require_positive("kappa", kappa)?;
    require_positive("omega_m", omega_m)?;
    if !(delta < 0.0) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            constraint: "negative (red) detuning; blue detuning heats",
        });
    }
    Ok(Occupancy(sideband_limit_expr(delta, kappa, omega_m)))
}

fn sideband_limit_expr<T>(delta: T, kappa: f64, omega_m: f64) -> T
where
    T: Copy
        + std::ops::Add<f64, Output = T>
        + std::ops::Mul<T, Output = T>
        + std::ops::Mul<f64, Output = T>
        + std::ops::Div<T, Output = T>,
{
    let s = delta + omega_m;
    (s * s + 0.25 * kappa * kappa) / (delta * (-4.0 * omega_m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalDetuning {
    /// −√(Ω² + κ²/4), rad/s.
    pub analytic: f64,
    /// Numerical minimizer of the sideband limit, rad/s.
    pub numeric: f64,
    /// Minimum occupancy at the analytic detuning.
    pub n_min: f64,
}

/// Complex-step derivative of the sideband limit with respect to Δ.
fn limit_slope(delta: f64, kappa: f64, omega_m: f64) -> f64 {
    let h = 1e-20 * delta.abs().max(1.0);
    sideband_limit_expr(Complex64::new(delta, h), kappa, omega_m).im / h
}

/// Detuning that minimizes the sideband-cooling limit, computed both in
/// closed form and by golden-section search followed by a secant solve of
/// the stationarity condition.
pub fn optimal_detuning(kappa: f64, omega_m: f64) -> Result<OptimalDetuning> {
    require_positive("kappa", kappa)?;
    require_positive("omega_m", omega_m)?;
    let analytic = -(omega_m * omega_m + 0.25 * kappa * kappa).sqrt();
    let f = |d: f64| sideband_limit_expr(d, kappa, omega_m);

    // The minimizer lies between −Ω and −(Ω + κ/2).
    let (mut a, mut b) = (-(omega_m + 0.5 * kappa) * 1.5, -0.5 * omega_m);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-7 * a.abs() {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (mut x0, mut x1) = (a, b);
    let (mut s0, mut s1) = (limit_slope(x0, kappa, omega_m), limit_slope(x1, kappa, omega_m));
    for _ in 0..60 {
        if s1 == s0 {
            break;
        }
        let x2 = x1 - s1 * (x1 - x0) / (s1 - s0);
        x0 = x1;
        s0 = s1;
        x1 = x2;
        s1 = limit_slope(x1, kappa, omega_m);
        if (x1 - x0).abs() <= 1e-15 * x1.abs() || s1 == 0.0 {
            break;
        }
    }
    Ok(OptimalDetuning { analytic, numeric: x1, n_min: f(analytic) })
}

/// Feedback-cooling floor at optimal gain, given the total force noise
/// and the displacement imprecision (single-sided PSDs).
pub fn feedback_min_occupancy_basic(s_ff_tot: f64, s_xx_imp: f64) -> Result<Occupancy> {
    require_non_negative("s_ff_tot", s_ff_tot)?;
    require_non_negative("s_xx_imp", s_xx_imp)?;
    Ok(Occupancy((s_ff_tot * s_xx_imp / (4.0 * HBAR * HBAR)).sqrt() - 0.5))
}

/// Feedback-cooling floor for a probe of cooperativity `c_q` detected with
/// efficiency `eta_det`, with a classical imprecision floor `s_xx_imp_cl`.
pub fn feedback_min_occupancy_full(
    c_q: f64,
    eta_det: f64,
    s_xx_imp_cl: f64,
    n_th: f64,
    gamma_m: f64,
    x_zpf: f64,
) -> Result<Occupancy> {
    require_positive("c_q", c_q)?;
    require_positive("eta_det", eta_det)?;
    if eta_det > 1.0 {
        return Err(Error::Domain { name: "eta_det", value: eta_det, constraint: "at most 1" });
    }
    require_non_negative("s_xx_imp_cl", s_xx_imp_cl)?;
    require_positive("x_zpf", x_zpf)?;
    let classical = classical_imprecision_figure(s_xx_imp_cl, n_th, gamma_m, x_zpf);
    Ok(Occupancy(((1.0 + c_q) * (1.0 / (4.0 * eta_det * c_q) + classical)).sqrt() - 0.5))
}

/// S_cl·n_th·Γ_m/(2x_zpf²), the classical imprecision in units that add to
/// 1/(4η_det C_q).
pub fn classical_imprecision_figure(s_xx_imp_cl: f64, n_th: f64, gamma_m: f64, x_zpf: f64) -> f64 {
    s_xx_imp_cl * n_th * gamma_m / (2.0 * x_zpf * x_zpf)
}

/// Force noise acting on the mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceNoise {
    /// 4 m Γ k_B T, N²/Hz.
    pub s_ff_thermal: f64,
    /// Radiation-pressure force noise, N²/Hz.
    pub s_ff_radiation: f64,
}

impl ForceNoise {
    /// Thermal noise plus quantum-limited radiation pressure C_q·S_th.
    pub fn quantum_limited(mode: &MechanicalMode, c_q: f64) -> Self {
        let th = mode.thermal_force_psd();
        Self { s_ff_thermal: th, s_ff_radiation: c_q * th }
    }

    pub fn total(&self) -> f64 {
        self.s_ff_thermal + self.s_ff_radiation
    }
}

/// Inputs of the displacement imprecision budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprecisionInputs {
    pub c_q: f64,
    pub eta_det: f64,
    /// Vacuum coupling, rad/s.
    pub g0: f64,
    /// Laser frequency noise, (rad/s)²/Hz.
    pub s_omega_omega: f64,
    /// Classical mirror/substrate displacement noise, m²/Hz.
    pub s_xx_mirror: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprecisionBudget {
    /// Shot-noise imprecision, m²/Hz.
    pub s_xx_quantum: f64,
    /// Laser frequency noise mapped to displacement, m²/Hz.
    pub s_xx_laser_freq: f64,
    pub s_xx_mirror: f64,
    /// (rad/s)²/Hz.
    pub s_omega_omega: f64,
    /// dω_c/dx = g0/x_zpf, rad/s per m.
    pub freq_pull: f64,
    /// S_ωω·n_th·Γ_m/(2g0²).
    pub laser_figure: f64,
    /// S_mirror·n_th·Γ_m/(2x_zpf²).
    pub mirror_figure: f64,
}

impl ImprecisionBudget {
    pub fn total(&self) -> f64 {
        self.s_xx_quantum + self.s_xx_laser_freq + self.s_xx_mirror
    }

    pub fn classical(&self) -> f64 {
        self.s_xx_laser_freq + self.s_xx_mirror
    }
}

pub fn imprecision_budget(mode: &MechanicalMode, inputs: &ImprecisionInputs) -> Result<ImprecisionBudget> {
    mode.validate()?;
    require_positive("c_q", inputs.c_q)?;
    require_positive("eta_det", inputs.eta_det)?;
    require_positive("g0", inputs.g0)?;
    require_non_negative("s_omega_omega", inputs.s_omega_omega)?;
    require_non_negative("s_xx_mirror", inputs.s_xx_mirror)?;
    let x = mode.x_zpf();
    let gamma = mode.decoherence_rate();
    let pull = inputs.g0 / x;
    Ok(ImprecisionBudget {
        s_xx_quantum: x * x / (2.0 * inputs.eta_det * inputs.c_q * gamma),
        s_xx_laser_freq: inputs.s_omega_omega / (pull * pull),
        s_xx_mirror: inputs.s_xx_mirror,
        s_omega_omega: inputs.s_omega_omega,
        freq_pull: pull,
        laser_figure: inputs.s_omega_omega * gamma / (2.0 * inputs.g0 * inputs.g0),
        mirror_figure: classical_imprecision_figure(inputs.s_xx_mirror, mode.n_th(), mode.gamma_m, x),
    })
}

/// Conversions between spectral densities and quanta, referenced to the
/// ground-state peak density S_xzp = 4x_zpf²/Γ of a given mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quanta {
    s_xzp: f64,
}

impl Quanta {
    pub fn for_mode(mode: &MechanicalMode) -> Self {
        Self { s_xzp: mode.zero_point_peak_psd() }
    }

    /// Ground-state peak displacement PSD, m²/Hz.
    pub fn s_xzp(&self) -> f64 {
        self.s_xzp
    }

    pub fn imprecision_to_quanta(&self, s_xx_imp: f64) -> f64 {
        s_xx_imp / (2.0 * self.s_xzp)
    }

    pub fn quanta_to_imprecision(&self, n_imp: f64) -> f64 {
        2.0 * self.s_xzp * n_imp
    }

    pub fn force_to_quanta(&self, s_ff: f64) -> f64 {
        s_ff * self.s_xzp / (8.0 * HBAR * HBAR)
    }

    pub fn quanta_to_force(&self, n_tot: f64) -> f64 {
        8.0 * HBAR * HBAR * n_tot / self.s_xzp
    }
}
