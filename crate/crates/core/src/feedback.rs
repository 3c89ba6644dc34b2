//! Feedback controller transfer functions, closed-loop susceptibility and
//! spectra, occupancy integration, and the analytic cold-damping model.
//!
//! Time dependence follows e^{−iΩt}, so a causal delay τ multiplies the
//! response by e^{+iΩτ} and a velocity-proportional force has a positive
//! imaginary part.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::limits::{Occupancy, Quanta};
use crate::params::MechanicalMode;
use crate::spectrum::{FrequencyGrid, MetersSq, Spectrum};

/// Minimum number of grid points per closed-loop linewidth.
pub const MIN_POINTS_PER_LINEWIDTH: f64 = 20.0;

/// A linear controller mapping measured displacement to force (after
/// multiplication by the loop calibration).
pub trait LoopFilter: Send + Sync {
    fn response(&self, omega: f64) -> Complex64;

    /// Overall (electronic) gain.
    fn gain(&self) -> f64;

    /// A copy with a different overall gain.
    fn with_gain(&self, gain: f64) -> Self
    where
        Self: Sized;

    /// Centre and width (rad/s) of each narrow feature of the response.
    /// Stability checks sample these densely.
    fn features(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

/// Second-order bandpass Γω/(Ω0² − ω² − iΓω); equals i at the centre.
pub fn bandpass(omega: f64, center: f64, bandwidth: f64) -> Complex64 {
    let num = Complex64::new(bandwidth * omega, 0.0);
    num / Complex64::new(center * center - omega * omega, -bandwidth * omega)
}

/// Narrow auxiliary stage added to the main filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxStage {
    /// rad/s
    pub center: f64,
    /// rad/s
    pub bandwidth: f64,
    /// Gain relative to the main filter's overall gain.
    pub gain: f64,
    /// Phase offset, rad.
    pub phase: f64,
    /// Power of the bandpass bracket.
    #[serde(default = "default_order")]
    pub order: u32,
}

fn default_order() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackFilter {
    pub gain: f64,
    /// φ_fb, rad.
    pub phase_offset: f64,
    /// τ_fb, s.
    pub delay: f64,
    /// Ω_fb, rad/s.
    pub main_center: f64,
    /// Γ_fb, rad/s.
    pub main_bandwidth: f64,
    #[serde(default)]
    pub aux_stages: Vec<AuxStage>,
}

impl FeedbackFilter {
    pub fn validate(&self) -> Result<()> {
        require_positive("main_center", self.main_center)?;
        require_positive("main_bandwidth", self.main_bandwidth)?;
        require_non_negative("delay", self.delay)?;
        if !self.gain.is_finite() || !self.phase_offset.is_finite() {
            return Err(Error::input("filter gain and phase must be finite"));
        }
        for a in &self.aux_stages {
            require_positive("aux.center", a.center)?;
            require_positive("aux.bandwidth", a.bandwidth)?;
            if a.order == 0 {
                return Err(Error::input("aux stage order must be at least 1"));
            }
        }
        Ok(())
    }

    /// Main stage alone, G·e^{i(Ωτ−φ)}·B(Ω)².
    pub fn main_response(&self, omega: f64) -> Complex64 {
        let b = bandpass(omega, self.main_center, self.main_bandwidth);
        Complex64::from_polar(self.gain, omega * self.delay - self.phase_offset) * b * b
    }

    /// Sum of the auxiliary stages, sharing the loop delay and overall gain.
    pub fn aux_response(&self, omega: f64) -> Complex64 {
        self.aux_stages
            .iter()
            .map(|a| {
                let b = bandpass(omega, a.center, a.bandwidth).powu(a.order);
                Complex64::from_polar(self.gain * a.gain, omega * self.delay - a.phase) * b
            })
            .sum()
    }

    pub fn without_aux(&self) -> Self {
        Self { aux_stages: Vec::new(), ..self.clone() }
    }
}

impl LoopFilter for FeedbackFilter {
    fn response(&self, omega: f64) -> Complex64 {
        self.main_response(omega) + self.aux_response(omega)
    }

    fn gain(&self) -> f64 {
        self.gain
    }

    fn with_gain(&self, gain: f64) -> Self {
        Self { gain, ..self.clone() }
    }

    fn features(&self) -> Vec<(f64, f64)> {
        std::iter::once((self.main_center, self.main_bandwidth))
            .chain(self.aux_stages.iter().map(|a| (a.center, a.bandwidth)))
            .collect()
    }
}

pub fn filter_response(filter: &FeedbackFilter, omega: f64) -> Complex64 {
    filter.response(omega)
}

/// Phase offset φ_fb that puts arg h(Ω_target) at exactly π/2, keeping the
/// auxiliary stages fixed.
pub fn tune_phase(filter: &FeedbackFilter, omega_target: f64) -> Result<f64> {
    filter.validate()?;
    require_positive("omega_target", omega_target)?;
    let unit = FeedbackFilter { gain: 1.0, phase_offset: 0.0, ..filter.clone() };
    let a = unit.main_response(omega_target);
    let b = unit.aux_response(omega_target);
    let c = -b.re / a.norm();
    if !(-1.0..=1.0).contains(&c) {
        return Err(Error::input(
            "auxiliary stages dominate the main filter at the target frequency; phase cannot be tuned",
        ));
    }
    let theta = c.acos();
    let phi = a.arg() - theta;
    Ok(wrap_phase(phi))
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(TWO_PI);
    if p > std::f64::consts::PI {
        p -= TWO_PI;
    }
    p
}

/// Ideal velocity feedback h = i·m·Γ·g·ω (already in N/m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdDamping {
    pub m_eff: f64,
    pub gamma: f64,
    pub g_fb: f64,
}

impl ColdDamping {
    pub fn for_mode(mode: &MechanicalMode, g_fb: f64) -> Self {
        Self { m_eff: mode.m_eff, gamma: mode.gamma_m, g_fb }
    }
}

impl LoopFilter for ColdDamping {
    fn response(&self, omega: f64) -> Complex64 {
        Complex64::new(0.0, self.m_eff * self.gamma * self.g_fb * omega)
    }

    fn gain(&self) -> f64 {
        self.g_fb
    }

    fn with_gain(&self, gain: f64) -> Self {
        Self { g_fb: gain, ..*self }
    }
}

/// A mechanical mode outside the loop's target that the controller also
/// drives, for stability analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousMode {
    /// rad/s
    pub omega: f64,
    /// rad/s
    pub gamma: f64,
    pub m_eff: f64,
    /// Signed transduction relative to the target mode; −1 for a mode
    /// seen π out of phase.
    pub coupling: f64,
}

/// Closed-loop model of the target mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopModel<F> {
    /// Mode with backaction-shifted frequency and total damping.
    pub mode: MechanicalMode,
    pub filter: F,
    /// Converts the filter output into force per metre, N/m.
    pub calibration: f64,
    /// Total force noise, N²/Hz.
    pub s_ff_tot: f64,
    /// Displacement imprecision, m²/Hz.
    pub s_xx_imp: f64,
    #[serde(default)]
    pub spurious: Vec<SpuriousMode>,
}

/// Loop calibration that makes the overall gain equal the cold-damping
/// gain g_fb at the mode frequency, i.e. |h(Ω)| = G·m·Ω·Γ there.
pub fn unit_gain_calibration(mode: &MechanicalMode, filter: &FeedbackFilter) -> Result<f64> {
    filter.validate()?;
    let b = bandpass(mode.omega_m, filter.main_center, filter.main_bandwidth);
    let mag = b.norm_sqr();
    if mag == 0.0 {
        return Err(Error::DivisionByZero("filter has no response at the mode".into()));
    }
    Ok(mode.m_eff * mode.omega_m * mode.gamma_m / mag)
}

impl<F: LoopFilter> LoopModel<F> {
    pub fn new(mode: MechanicalMode, filter: F, calibration: f64, s_ff_tot: f64, s_xx_imp: f64) -> Result<Self> {
        mode.validate()?;
        require_positive("calibration", calibration)?;
        require_non_negative("s_ff_tot", s_ff_tot)?;
        require_non_negative("s_xx_imp", s_xx_imp)?;
        Ok(Self { mode, filter, calibration, s_ff_tot, s_xx_imp, spurious: Vec::new() })
    }

    pub fn with_spurious(mut self, modes: Vec<SpuriousMode>) -> Self {
        self.spurious = modes;
        self
    }

    pub fn with_gain(&self, gain: f64) -> Self
    where
        F: Clone,
    {
        Self {
            filter: self.filter.with_gain(gain),
            mode: self.mode,
            calibration: self.calibration,
            s_ff_tot: self.s_ff_tot,
            s_xx_imp: self.s_xx_imp,
            spurious: self.spurious.clone(),
        }
    }

    /// Displacement-to-force feedback h_fb(Ω), N/m.
    pub fn h(&self, omega: f64) -> Complex64 {
        self.filter.response(omega) * self.calibration
    }

    /// Open-loop susceptibility of the shifted mode, m/N.
    pub fn chi(&self, omega: f64) -> Complex64 {
        let m = &self.mode;
        Complex64::new(m.m_eff * (m.omega_m * m.omega_m - omega * omega), -m.m_eff * m.gamma_m * omega).inv()
    }

    pub fn chi_fb(&self, omega: f64) -> Complex64 {
        let m = &self.mode;
        let inv = Complex64::new(m.m_eff * (m.omega_m * m.omega_m - omega * omega), -m.m_eff * m.gamma_m * omega);
        (inv - self.h(omega)).inv()
    }

    /// Out-of-loop displacement PSD at one angular frequency.
    pub fn s_xx(&self, omega: f64) -> f64 {
        self.chi_fb(omega).norm_sqr() * (self.s_ff_tot + self.h(omega).norm_sqr() * self.s_xx_imp)
    }

    /// In-loop (measured) PSD at one angular frequency.
    pub fn s_yy(&self, omega: f64) -> f64 {
        let chi = self.chi(omega);
        self.chi_fb(omega).norm_sqr() * (self.s_ff_tot + self.s_xx_imp / chi.norm_sqr())
    }

    /// Damping rate of the target mode including the feedback, rad/s.
    pub fn effective_damping(&self) -> f64 {
        let w = self.mode.omega_m;
        self.mode.gamma_m + self.h(w).im / (self.mode.m_eff * w)
    }

    /// Effective damping of each spurious mode, rad/s.
    pub fn spurious_damping(&self) -> Vec<f64> {
        self.spurious.iter().map(|s| s.gamma + s.coupling * self.h(s.omega).im / (s.m_eff * s.omega)).collect()
    }

    /// Open-loop transfer χ·h, with every spurious mode added to the
    /// measured displacement with its coupling.
    pub fn open_loop(&self, omega: f64) -> Complex64 {
        let spurious: Complex64 = self
            .spurious
            .iter()
            .map(|s| {
                let inv = Complex64::new(s.m_eff * (s.omega * s.omega - omega * omega), -s.m_eff * s.gamma * omega);
                s.coupling / inv
            })
            .sum();
        (self.chi(omega) + spurious) * self.h(omega)
    }

    /// Net number of times 1 − χh circles the origin as Ω runs from 0 to
    /// ∞. Open-loop poles are all damped, so each encirclement is a
    /// closed-loop pole that is not. Catches instabilities away from the
    /// modelled modes, such as a filter resonance pulled unstable by the
    /// loop delay.
    pub fn nyquist_encirclements(&self) -> i64 {
        let mut features: Vec<(f64, f64)> = std::iter::once((self.mode.omega_m, self.mode.gamma_m))
            .chain(self.spurious.iter().map(|s| (s.omega, s.gamma)))
            .chain(self.filter.features())
            .collect();
        features.retain(|&(c, w)| c > 0.0 && w > 0.0);
        let top = features.iter().map(|f| f.0).fold(self.mode.omega_m, f64::max);
        let low = features.iter().map(|f| f.0).fold(self.mode.omega_m, f64::min);

        let (lo, hi) = (1e-4 * low, 1e4 * top);
        let decades = (hi / lo).log10();
        let n_log = (200.0 * decades).ceil() as usize;
        let mut pts: Vec<f64> = (0..=n_log).map(|i| lo * (hi / lo).powf(i as f64 / n_log as f64)).collect();
        for &(c, w) in &features {
            pts.push(c);
            let mut off = 1e-3 * w;
            while off < 0.2 * c {
                pts.extend([c - off, c + off]);
                off *= 1.15;
            }
        }
        pts.retain(|&w| w >= lo && w <= hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();

        let f = |w: f64| 1.0 - self.open_loop(w);
        let mut total = 0.0;
        let mut prev = (pts[0], f(pts[0]));
        for &w in &pts[1..] {
            let next = (w, f(w));
            total += refine_turn(&f, prev, next, 0);
            prev = next;
        }
        (total / std::f64::consts::TAU).round() as i64
    }

    pub fn is_stable(&self) -> bool {
        self.effective_damping() > 0.0
            && self.spurious_damping().iter().all(|&g| g > 0.0)
            && self.nyquist_encirclements() == 0
    }

    fn check_stable(&self) -> Result<f64> {
        let g = self.effective_damping();
        if !(g > 0.0) {
            return Err(Error::Unstable(format!("closed-loop damping {g:e} rad/s at gain {}", self.filter.gain())));
        }
        let n = self.nyquist_encirclements();
        if n != 0 {
            return Err(Error::Unstable(format!(
                "Nyquist plot encircles the critical point {n} time(s) at gain {}",
                self.filter.gain()
            )));
        }
        Ok(g)
    }

    /// A grid centred on the mode spanning `widths` closed-loop linewidths
    /// with `per_width` points per linewidth.
    pub fn auto_grid(&self, widths: f64, per_width: f64) -> Result<FrequencyGrid> {
        let g = self.check_stable()?;
        let fw = g / TWO_PI;
        let f0 = self.mode.omega_m / TWO_PI;
        let half = (0.5 * widths * fw).min(0.95 * f0);
        let len = ((2.0 * half / fw) * per_width).ceil() as usize + 1;
        FrequencyGrid::centered(f0, half, len)
    }

    fn resolution_note(&self, grid: &FrequencyGrid) -> Option<String> {
        let ppw = self.effective_damping() / TWO_PI / grid.step;
        (ppw < MIN_POINTS_PER_LINEWIDTH).then(|| {
            log::warn!(
                "grid resolves the closed-loop linewidth with only {ppw:.1} points (want {MIN_POINTS_PER_LINEWIDTH})"
            );
            format!("coarse: {ppw:.2} points per linewidth")
        })
    }

    fn sample(&self, grid: &FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Spectrum<MetersSq>> {
        let values = (0..grid.len).map(|i| f(grid.omega(i))).collect();
        let mut s = Spectrum::on_grid(grid, values)?;
        if let Some(note) = self.resolution_note(grid) {
            s = s.with_metadata("resolution", note);
        }
        Ok(s)
    }

    /// Closed-loop occupancy from the integrated out-of-loop spectrum on
    /// an automatic grid.
    /// The grid is refined around the spectral peak when the spectrum is
    /// narrower than the closed-loop damping suggests.
    pub fn occupancy(&self) -> Result<f64> {
        let mut grid = self.auto_grid(400.0, 25.0)?;
        for _ in 0..4 {
            let s = closed_loop_displacement_psd(self, &grid)?;
            let (_, fp, w) = peak_geometry(s.freqs(), s.values())?;
            if w / grid.step >= 25.0 {
                return occupancy_from_psd(&s, self.mode.x_zpf());
            }
            let half = (200.0 * w).min(0.95 * fp);
            grid = FrequencyGrid::centered(fp, half, (2.0 * half / w * 30.0).ceil() as usize + 1)?;
        }
        let s = closed_loop_displacement_psd(self, &grid)?;
        occupancy_from_psd(&s, self.mode.x_zpf())
    }
}

/// Phase advance of `f` between two samples, bisecting until each step
/// turns by less than 0.2 rad.
fn refine_turn(f: &impl Fn(f64) -> Complex64, a: (f64, Complex64), b: (f64, Complex64), depth: u32) -> f64 {
    let t = (b.1 / a.1).arg();
    if t.abs() < 0.2 || depth >= 48 || b.0 - a.0 <= 4.0 * f64::EPSILON * b.0 {
        return t;
    }
    let w = 0.5 * (a.0 + b.0);
    let mid = (w, f(w));
    refine_turn(f, a, mid, depth + 1) + refine_turn(f, mid, b, depth + 1)
}

pub fn closed_loop_susceptibility<F: LoopFilter>(model: &LoopModel<F>, omega: f64) -> Complex64 {
    model.chi_fb(omega)
}

pub fn closed_loop_displacement_psd<F: LoopFilter>(
    model: &LoopModel<F>,
    grid: &FrequencyGrid,
) -> Result<Spectrum<MetersSq>> {
    model.sample(grid, |w| model.s_xx(w))
}

pub fn inloop_psd<F: LoopFilter>(model: &LoopModel<F>, grid: &FrequencyGrid) -> Result<Spectrum<MetersSq>> {
    model.sample(grid, |w| model.s_yy(w))
}

/// Resonance centre and FWHM (Hz) from the peak and its half-maximum
/// crossings, linearly interpolated.
pub(crate) fn peak_geometry(freqs: &[f64], values: &[f64]) -> Result<(usize, f64, f64)> {
    let (imax, &vmax) =
        values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).ok_or_else(|| Error::input("empty spectrum"))?;
    if !(vmax > 0.0) {
        return Err(Error::input("spectrum has no positive peak"));
    }
    let half = 0.5 * vmax;
    let right = (imax..values.len()).find(|&i| values[i] < half);
    let left = (0..=imax).rev().find(|&i| values[i] < half);
    let (Some(r), Some(l)) = (right, left) else {
        return Err(Error::input("resonance not resolved: half-maximum not reached inside the grid"));
    };
    let interp = |i: usize, j: usize| {
        let (fa, fb, va, vb) = (freqs[i], freqs[j], values[i], values[j]);
        fa + (half - va) * (fb - fa) / (vb - va)
    };
    let f_right = interp(r - 1, r);
    let f_left = interp(l + 1, l);
    Ok((imax, freqs[imax], f_right - f_left))
}

/// ∫ df/(f² − p) over [f_e, ∞) (upper) or [0, f_e] (lower), principal
/// branches valid while f_e lies on the far side of |√p| from the range.
fn tail_kernel(p: Complex64, f_e: f64, upper: bool) -> Complex64 {
    let s = p.sqrt();
    let fe = Complex64::new(f_e, 0.0);
    if upper {
        -((fe - s) / (fe + s)).ln() / (2.0 * s)
    } else {
        -(((s + fe) / (s - fe)).ln()) / (2.0 * s)
    }
}

/// Integral of (a + b·f²)/((f0² − f²)² + w²f²) beyond a grid edge.
fn mechanical_tail(a: f64, b: f64, f0: f64, w: f64, f_e: f64, upper: bool) -> f64 {
    if !upper && f_e <= 0.0 {
        return 0.0;
    }
    let w = w.min(1.9 * f0);
    let im = w * (f0 * f0 - 0.25 * w * w).sqrt();
    let p = Complex64::new(f0 * f0 - 0.5 * w * w, im);
    ((p * b + a) * tail_kernel(p, f_e, upper)).im / im
}

fn mechanical_denominator(f: f64, f0: f64, w: f64) -> f64 {
    (f0 * f0 - f * f).powi(2) + w * w * f * f
}

/// ∫₀^∞ S df of a resonant single-sided PSD: trapezoid over the grid plus
/// analytic tails of the form (a + b·f²)/((f0² − f²)² + w²f²), with a and
/// b matched to the two grid edges. Refuses grids that resolve the
/// linewidth with fewer than [`MIN_POINTS_PER_LINEWIDTH`] points.
pub fn integrate_resonance(freqs: &[f64], values: &[f64]) -> Result<f64> {
    let n = freqs.len();
    if n < 3 {
        return Err(Error::input("spectrum too short to integrate"));
    }
    let df = (freqs[n - 1] - freqs[0]) / (n - 1) as f64;
    let (_, f0, w) = peak_geometry(freqs, values)?;
    if w / df < MIN_POINTS_PER_LINEWIDTH {
        return Err(Error::input(format!(
            "grid resolves the linewidth with {:.1} points; at least {MIN_POINTS_PER_LINEWIDTH} are needed",
            w / df
        )));
    }
    let core = crate::spectrum::trapezoid(values, df);
    let k = (n / 200).max(1);
    let block = |range: std::ops::Range<usize>| {
        let len = range.len() as f64;
        let (mut num, mut f2) = (0.0, 0.0);
        for i in range {
            num += values[i] * mechanical_denominator(freqs[i], f0, w);
            f2 += freqs[i] * freqs[i];
        }
        (num / len, f2 / len)
    };
    let (a_lo, f2_lo) = block(0..k);
    let (a_hi, f2_hi) = block(n - k..n);
    let b = (a_hi - a_lo) / (f2_hi - f2_lo);
    let a = a_lo - b * f2_lo;
    let (lo, hi) = if a >= 0.0 && b >= 0.0 {
        (mechanical_tail(a, b, f0, w, freqs[0], false), mechanical_tail(a, b, f0, w, freqs[n - 1], true))
    } else {
        (mechanical_tail(a_lo, 0.0, f0, w, freqs[0], false), mechanical_tail(a_hi, 0.0, f0, w, freqs[n - 1], true))
    };
    Ok(core + lo + hi)
}

/// Phonon occupancy n̄ = ∫S_xx df/(2x_zpf²) − 1/2 of a displacement PSD.
pub fn occupancy_from_psd(spectrum: &Spectrum<MetersSq>, x_zpf: f64) -> Result<f64> {
    require_positive("x_zpf", x_zpf)?;
    let area = integrate_resonance(spectrum.freqs(), spectrum.values())?;
    Ok(area / (2.0 * x_zpf * x_zpf) - 0.5)
}

/// ∫₀^∞|χ_fb|² dω and ∫₀^∞|χ_fb|²ω² dω for ideal velocity feedback.
pub fn cold_damping_integrals(m_eff: f64, omega_m: f64, gamma_m: f64, g_fb: f64) -> (f64, f64) {
    let pi = std::f64::consts::PI;
    let g = gamma_m * (1.0 + g_fb);
    (pi / (2.0 * m_eff * m_eff * omega_m * omega_m * g), pi / (2.0 * m_eff * m_eff * g))
}

/// Occupancy under ideal cold damping at gain `g_fb`, with the force noise
/// given in quanta (`n_tot`) referenced to the mode's own linewidth.
pub fn cold_damping_occupancy(n_tot: f64, g_fb: f64, mode: &MechanicalMode, s_xx_imp: f64) -> Result<Occupancy> {
    mode.validate()?;
    require_non_negative("g_fb", g_fb)?;
    require_non_negative("n_tot", n_tot)?;
    require_non_negative("s_xx_imp", s_xx_imp)?;
    let s_ff = Quanta::for_mode(mode).quanta_to_force(n_tot);
    Ok(Occupancy(cold_damping_from_psd(s_ff, g_fb, mode, s_xx_imp)))
}

fn cold_damping_from_psd(s_ff: f64, g_fb: f64, mode: &MechanicalMode, s_xx_imp: f64) -> f64 {
    let (m, w, g) = (mode.m_eff, mode.omega_m, mode.gamma_m);
    let x2 = mode.x_zpf().powi(2);
    (s_ff / (m * m * w * w * g * (1.0 + g_fb)) + g * g_fb * g_fb * s_xx_imp / (1.0 + g_fb)) / (8.0 * x2) - 0.5
}

/// Gain minimizing the cold-damping occupancy in the large-gain limit.
pub fn optimal_gain(mode: &MechanicalMode, s_ff_tot: f64, s_xx_imp: f64) -> Result<f64> {
    mode.validate()?;
    require_positive("s_ff_tot", s_ff_tot)?;
    require_positive("s_xx_imp", s_xx_imp)?;
    Ok((s_ff_tot / s_xx_imp).sqrt() / (mode.m_eff * mode.omega_m * mode.gamma_m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub gain: f64,
    pub stable: bool,
    /// Smallest effective damping among all modelled modes, rad/s.
    pub min_damping: f64,
}

/// Stability of the loop at each gain, judged by the sign of the
/// effective damping of the target mode and every spurious mode and by the
/// Nyquist criterion.
pub fn loop_stability_scan<F: LoopFilter + Clone>(model: &LoopModel<F>, gains: &[f64]) -> Vec<StabilityPoint> {
    gains
        .iter()
        .map(|&gain| {
            let m = model.with_gain(gain);
            let min_damping =
                std::iter::once(m.effective_damping()).chain(m.spurious_damping()).fold(f64::INFINITY, f64::min);
            StabilityPoint { gain, stable: min_damping > 0.0 && m.nyquist_encirclements() == 0, min_damping }
        })
        .collect()
}

/// Largest gain searched for a Nyquist instability.
pub const NYQUIST_SEARCH_MAX_GAIN: f64 = 1e6;

/// Smallest positive gain at which the loop goes unstable: either some
/// modelled mode loses its damping (every effective damping is affine in
/// the gain) or a closed-loop pole elsewhere crosses over, found by
/// doubling the gain from 1e-3 up to [`NYQUIST_SEARCH_MAX_GAIN`] and
/// bisecting.
pub fn instability_threshold<F: LoopFilter + Clone>(model: &LoopModel<F>) -> Option<f64> {
    let at0 = model.with_gain(0.0);
    let at1 = model.with_gain(1.0);
    let d0 = std::iter::once(at0.effective_damping()).chain(at0.spurious_damping());
    let d1 = std::iter::once(at1.effective_damping()).chain(at1.spurious_damping());
    let damping = d0
        .zip(d1)
        .filter_map(|(a, b)| {
            let slope = b - a;
            (slope < 0.0 && a > 0.0).then(|| a / -slope)
        })
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |x| x.min(g))));

    let ceiling = damping.unwrap_or(NYQUIST_SEARCH_MAX_GAIN);
    let encircles = |g: f64| model.with_gain(g).nyquist_encirclements() != 0;
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while hi < ceiling && !encircles(hi) {
        lo = hi;
        hi *= 2.0;
    }
    if hi >= ceiling {
        return damping;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if encircles(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    Some(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub gain: f64,
    /// NaN where the loop is unstable.
    pub n_bar: f64,
    pub stable: bool,
}

/// Integrated closed-loop occupancy for each gain, evaluated in parallel.
pub fn gain_sweep<F: LoopFilter + Clone>(model: &LoopModel<F>, gains: &[f64]) -> Result<Vec<GainPoint>> {
    gains
        .par_iter()
        .map(|&gain| {
            let m = model.with_gain(gain);
            if !m.is_stable() {
                return Ok(GainPoint { gain, n_bar: f64::NAN, stable: false });
            }
            Ok(GainPoint { gain, n_bar: m.occupancy()?, stable: true })
        })
        .collect()
}
