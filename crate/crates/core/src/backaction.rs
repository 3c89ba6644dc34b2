//! Dynamical backaction: optical spring and optical damping, and the
//! regressions used to extract the vacuum coupling and the probe's damping
//! contribution from power series.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::lsq::{linear_least_squares, FitResult};
use crate::params::{intracavity_photons, BeamRole, MechanicalMode, OpticalBeam, OpticalCavity};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackactionResult {
    /// Total optical spring shift, rad/s.
    pub delta_omega: f64,
    /// Total optical damping, rad/s.
    pub gamma_opt: f64,
    /// Intrinsic plus optical damping, rad/s.
    pub gamma_total: f64,
}

/// Spring shift per unit g², i.e. the bracket of the optical spring.
fn spring_kernel(delta: f64, kappa: f64, omega_m: f64) -> f64 {
    let h2 = 0.25 * kappa * kappa;
    let lo = delta - omega_m;
    let hi = delta + omega_m;
    lo / (h2 + lo * lo) + hi / (h2 + hi * hi)
}

/// Damping per unit g².
fn damping_kernel(delta: f64, kappa: f64, omega_m: f64) -> f64 {
    let h2 = 0.25 * kappa * kappa;
    let lo = delta - omega_m;
    let hi = delta + omega_m;
    // Written as a single fraction so that Δ → 0 cancels exactly.
    kappa * (lo * lo - hi * hi) / ((h2 + hi * hi) * (h2 + lo * lo))
}

/// Optical spring shift δΩ (rad/s) of a beam with field-enhanced coupling
/// `g` at detuning `delta`.
pub fn optical_spring(g: f64, delta: f64, kappa: f64, omega_m: f64) -> f64 {
    g * g * spring_kernel(delta, kappa, omega_m)
}

/// Optical damping Γ_opt (rad/s); positive for red detuning.
pub fn optical_damping(g: f64, delta: f64, kappa: f64, omega_m: f64) -> f64 {
    g * g * damping_kernel(delta, kappa, omega_m)
}

/// Combined backaction of several beams on a mode. Returns an instability
/// error when the total damping is not positive.
pub fn total_backaction(mode: &MechanicalMode, beams: &[OpticalBeam], kappa: f64) -> Result<BackactionResult> {
    mode.validate()?;
    require_positive("kappa", kappa)?;
    let mut delta_omega = 0.0;
    let mut gamma_opt = 0.0;
    for b in beams {
        b.validate()?;
        delta_omega += optical_spring(b.g, b.detuning, kappa, mode.omega_m);
        gamma_opt += optical_damping(b.g, b.detuning, kappa, mode.omega_m);
    }
    let gamma_total = mode.gamma_m + gamma_opt;
    if gamma_total <= 0.0 {
        return Err(Error::Unstable(format!("total mechanical damping {gamma_total:e} rad/s is not positive")));
    }
    Ok(BackactionResult { delta_omega, gamma_opt, gamma_total })
}

/// One point of a spring-versus-power series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringPoint {
    /// Incident beam power, W.
    pub power: f64,
    /// Measured frequency shift, rad/s.
    pub delta_omega: f64,
    /// Standard error of the shift, rad/s.
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringFit {
    /// g² per incident watt, (rad/s)²/W.
    pub slope: f64,
    /// Power-independent shift (e.g. from a second beam), rad/s.
    pub offset: f64,
    /// Vacuum coupling implied by the slope, rad/s.
    pub g0_estimate: f64,
    pub fit: FitResult,
}

fn weights_from<T>(points: &[T], stderr: impl Fn(&T) -> Option<f64>) -> Result<Option<Vec<f64>>> {
    let errs: Vec<Option<f64>> = points.iter().map(&stderr).collect();
    if errs.iter().all(Option::is_none) {
        return Ok(None);
    }
    errs.iter()
        .map(|e| match e {
            Some(s) if *s > 0.0 && s.is_finite() => Ok(1.0 / (s * s)),
            _ => Err(Error::input("standard errors must be given and positive for every point or for none")),
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Regresses δΩ = offset + slope·P·K(Δ) where K is the spring kernel, so
/// that g² = slope·P. The vacuum coupling follows from the photon number
/// per watt, with `coupled_fraction` the share of incident power that
/// reaches the cavity mode.
pub fn fit_spring_vs_power(
    points: &[SpringPoint],
    delta: f64,
    cavity: &OpticalCavity,
    omega_m: f64,
    coupled_fraction: f64,
) -> Result<SpringFit> {
    require_positive("kappa", cavity.kappa)?;
    require_positive("omega_m", omega_m)?;
    require_positive("coupled_fraction", coupled_fraction)?;
    if points.len() < 2 {
        return Err(Error::input("spring fit needs at least two points"));
    }
    let k = spring_kernel(delta, cavity.kappa, omega_m);
    if k == 0.0 {
        return Err(Error::RankDeficient("spring kernel vanishes at this detuning".into()));
    }
    let design = DMatrix::from_fn(points.len(), 2, |i, j| if j == 0 { 1.0 } else { points[i].power * k });
    let y: Vec<f64> = points.iter().map(|p| p.delta_omega).collect();
    let w = weights_from(points, |p| p.stderr)?;
    let fit = linear_least_squares(&design, &y, w.as_deref(), &["offset", "slope"])?;
    let slope = fit.expect("slope");
    let per_watt = intracavity_photons(
        cavity,
        &OpticalBeam { power_in: coupled_fraction, detuning: delta, g: 0.0, role: BeamRole::Cooling },
    )?;
    Ok(SpringFit { slope, offset: fit.expect("offset"), g0_estimate: (slope.max(0.0) / per_watt).sqrt(), fit })
}

/// One point of a damping-versus-coupling series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingPoint {
    /// Cooling-beam field-enhanced coupling, rad/s.
    pub g: f64,
    /// Measured total damping, rad/s.
    pub gamma_tot: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingFit {
    /// Extra damping not explained by the cooling beam, rad/s.
    pub gamma_probe_offset: f64,
    pub fit: FitResult,
}

/// Fits Γ_tot = Γ_m + offset + Γ_opt(g) with the optical damping fixed by
/// theory and the offset the only free parameter.
pub fn fit_damping_offset(
    points: &[DampingPoint],
    gamma_m: f64,
    delta: f64,
    kappa: f64,
    omega_m: f64,
) -> Result<DampingFit> {
    require_positive("kappa", kappa)?;
    require_positive("omega_m", omega_m)?;
    if points.len() < 2 {
        return Err(Error::input("damping fit needs at least two points"));
    }
    let y: Vec<f64> =
        points.iter().map(|p| p.gamma_tot - gamma_m - optical_damping(p.g, delta, kappa, omega_m)).collect();
    let design = DMatrix::from_element(points.len(), 1, 1.0);
    let w = weights_from(points, |p| p.stderr)?;
    let fit = linear_least_squares(&design, &y, w.as_deref(), &["offset"])?;
    Ok(DampingFit { gamma_probe_offset: fit.expect("offset"), fit })
}
