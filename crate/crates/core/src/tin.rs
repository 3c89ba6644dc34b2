//! Thermal intermodulation noise in phase-quadrature readout.
//!
//! Cavity frequency fluctuations δυ (in units of κ/2) are transduced
//! nonlinearly into the phase quadrature. The leading nonlinear spectral
//! terms are estimated from the linear spectrum S_υυ assuming δυ is a
//! stationary Gaussian process.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::spectrum::{Normalized, Spectrum};

/// Edge leakage fraction above which a convolution is flagged.
pub const LEAKAGE_WARNING: f64 = 0.01;

/// Series of the phase quadrature −2/(1+υ0²)·(c0 + c1δυ + c2δυ² + c3δυ³).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransductionExpansion {
    pub upsilon0: f64,
    pub coeffs: [f64; 4],
}

impl TransductionExpansion {
    pub fn prefactor(&self) -> f64 {
        -2.0 / (1.0 + self.upsilon0 * self.upsilon0)
    }

    pub fn eval(&self, dv: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        self.prefactor() * (c0 + dv * (c1 + dv * (c2 + dv * c3)))
    }
}

/// Exact phase-quadrature signal −2υ/(1+υ²) of a Lorentzian cavity.
pub fn phase_quadrature(upsilon: f64) -> f64 {
    -2.0 * upsilon / (1.0 + upsilon * upsilon)
}

/// Expansion coefficients in the published closed form.
pub fn phase_expansion(upsilon0: f64) -> TransductionExpansion {
    let u2 = upsilon0 * upsilon0;
    let d = 1.0 + u2;
    TransductionExpansion {
        upsilon0,
        coeffs: [upsilon0, (1.0 - u2) / d, upsilon0 * (u2 - 3.0) / (d * d), (u2 * u2 - 6.0 * u2 + 1.0) / (d * d * d)],
    }
}

/// Taylor coefficients of [`phase_quadrature`] about υ0. They agree with
/// [`phase_expansion`] through second order; the cubic coefficient has the
/// opposite sign.
pub fn phase_expansion_taylor(upsilon0: f64) -> TransductionExpansion {
    let mut e = phase_expansion(upsilon0);
    e.coeffs[3] = -e.coeffs[3];
    e
}

/// ∫S df of a single-sided spectrum measured from its first bin.
pub fn spectrum_variance(s: &Spectrum<Normalized>) -> f64 {
    s.integrate()
}

/// Spectrum of the ⟨δυ(t)δυ(t+τ)³⟩ term, 3σ²·S_υυ.
pub fn cubic_correlation_spectrum(s: &Spectrum<Normalized>, variance: f64) -> Result<Spectrum<Normalized>> {
    require_non_negative("variance", variance)?;
    s.scaled(3.0 * variance)
}

/// S ⊛ S ⊛ S of a single-sided spectrum, returned single-sided on the
/// input grid extended down to zero frequency. The fraction of power that
/// falls outside the grid is stored under the `edge_leakage` metadata key.
pub fn triple_convolution_spectrum(s: &Spectrum<Normalized>) -> Result<Spectrum<Normalized>> {
    let df = s.df();
    let start = s.freqs()[0];
    let offset = (start / df).round();
    if start < 0.0 || (start - offset * df).abs() > 1e-6 * df {
        return Err(Error::input("grid must be non-negative and aligned to multiples of its step"));
    }
    let offset = offset as usize;
    let n = offset + s.len() - 1;
    let mut one_sided = vec![0.0; n + 1];
    one_sided[offset..].copy_from_slice(s.values());

    let width = 2 * n + 1;
    let len = (4 * width).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (k, &v) in one_sided.iter().enumerate() {
        buf[n + k].re = 0.5 * v;
        buf[n - k].re = 0.5 * v;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for z in &mut buf {
        *z = *z * *z * *z;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let norm = df * df / len as f64;
    let centre = 3 * n;
    let two_sided = |m: isize| buf[(centre as isize + m) as usize].re * norm;

    let total: f64 = (0..len).map(|i| buf[i].re * norm).sum::<f64>() * df;
    let inside: f64 = (-(n as isize)..=n as isize).map(two_sided).sum::<f64>() * df;
    let leakage = if total > 0.0 { 1.0 - inside / total } else { 0.0 };
    if leakage > LEAKAGE_WARNING {
        log::warn!("triple convolution leaks {:.2}% of its power beyond the grid", 100.0 * leakage);
    }
    let values: Vec<f64> = (0..=n).map(|k| (2.0 * two_sided(k as isize)).max(0.0)).collect();
    let freqs: Vec<f64> = (0..=n).map(|k| k as f64 * df).collect();
    Ok(Spectrum::new(freqs, values)?.with_metadata("edge_leakage", format!("{leakage:e}")))
}

/// PSD of υ³ for Gaussian υ: 9σ⁴S + 6·S⊛S⊛S, on the convolution grid.
pub fn gaussian_cube_spectrum(s: &Spectrum<Normalized>) -> Result<Spectrum<Normalized>> {
    let var = spectrum_variance(s);
    let t = triple_convolution_spectrum(s)?;
    let lead = t.len() - s.len();
    let leakage = t.metadata.get("edge_leakage").cloned().unwrap_or_default();
    let values: Vec<f64> = t
        .values()
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let lin = if k >= lead { s.values()[k - lead] } else { 0.0 };
            9.0 * var * var * lin + 6.0 * c
        })
        .collect();
    Ok(Spectrum::new(t.freqs().to_vec(), values)?.with_metadata("edge_leakage", leakage))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinBudget {
    /// (g0/κ)²·n_th
    pub first_order_scaling: f64,
    /// (g0/κ)⁴·n_th²
    pub second_order_scaling: f64,
    /// 2(g0/κ)√n_th
    pub rms_detuning: f64,
}

pub fn tin_budget(g0: f64, kappa: f64, n_th: f64) -> Result<TinBudget> {
    require_positive("g0", g0)?;
    require_positive("kappa", kappa)?;
    require_non_negative("n_th", n_th)?;
    let r = g0 / kappa;
    let first = r * r * n_th;
    Ok(TinBudget {
        first_order_scaling: first,
        second_order_scaling: first * first,
        rms_detuning: 2.0 * r * n_th.sqrt(),
    })
}
