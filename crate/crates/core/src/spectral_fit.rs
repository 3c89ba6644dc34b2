//! Regression and calibration: Lorentzian and susceptibility fits, anchor
//! calibration, closed-loop spectrum fits, the classical-heating test, gas
//! damping, the fiber-cavity reflection lineshape and frequency-noise
//! calibration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constants::{R_GAS, TWO_PI};
use crate::error::{require_non_negative, require_positive, require_unit_interval, Error, Result};
use crate::feedback::{integrate_resonance, peak_geometry, unit_gain_calibration, FeedbackFilter, LoopModel};
use crate::limits::Quanta;
use crate::lsq::{fit_proportional, levenberg_marquardt, linear_least_squares, FitResult, FnResiduals, LmOptions};
use crate::params::MechanicalMode;
use crate::spectrum::{trapezoid, AngularFrequencySq, MetersSq, Normalized, PsdUnit, Spectrum, VoltsSq};

/// Floor estimate: mean of the lowest tenth of the samples.
fn low_floor(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (v.len() / 10).max(1);
    v[..k].iter().sum::<f64>() / k as f64
}

fn relative_scale(values: &[f64]) -> Vec<f64> {
    let tiny = values.iter().cloned().fold(0.0, f64::max) * 1e-12;
    values.iter().map(|&d| 1.0 / d.max(tiny).max(f64::MIN_POSITIVE)).collect()
}

/// Initial (f0, fwhm, height above floor, floor) of a single peak.
fn peak_guess(freqs: &[f64], values: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let floor = low_floor(values);
    let lifted: Vec<f64> = values.iter().map(|v| v - floor).collect();
    let peak = lifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = values.iter().cloned().fold(0.0, f64::max);
    if !(peak > 1e-9 * scale) || !(peak > 0.0) {
        return Err(Error::RankDeficient("spectrum has no peak above its floor".into()));
    }
    let (_, f0, w) = peak_geometry(freqs, &lifted)?;
    Ok((f0, w, peak, floor))
}

fn require_span(freqs: &[f64], f0: f64, w: f64, widths: f64) -> Result<()> {
    let lo = f0 - freqs[0];
    let hi = freqs[freqs.len() - 1] - f0;
    if lo + hi < widths * w {
        return Err(Error::input(format!(
            "spectrum spans {:.1} linewidths; at least {widths} are needed",
            (lo + hi) / w
        )));
    }
    Ok(())
}

/// floor + (area·w/2π)/((f − f0)² + (w/2)²), all in Hz.
pub fn lorentzian(f: f64, center: f64, fwhm: f64, area: f64, floor: f64) -> f64 {
    let d = f - center;
    floor + area * fwhm / TWO_PI / (d * d + 0.25 * fwhm * fwhm)
}

/// Fits a Lorentzian on a flat floor. Parameters `center` and `fwhm` are
/// in Hz, `area` in spectrum units times Hz.
pub fn fit_lorentzian<U: PsdUnit>(spectrum: &Spectrum<U>) -> Result<FitResult> {
    let f = spectrum.freqs();
    let d = spectrum.values();
    let (f0, w, peak, floor) = peak_guess(f, d)?;
    require_span(f, f0, w, 5.0)?;
    let area = peak * std::f64::consts::PI * w / 2.0;
    let wt = relative_scale(d);
    let problem = FnResiduals {
        len: f.len(),
        f: |p: &[f64], out: &mut [f64]| {
            for i in 0..f.len() {
                out[i] = (lorentzian(f[i], p[0], p[1], p[2], p[3]) - d[i]) * wt[i];
            }
        },
    };
    let opts = LmOptions { typical: Some(vec![f0, w, area, peak]), ..LmOptions::default() };
    levenberg_marquardt(&problem, &[f0, w, area, floor], &["center", "fwhm", "area", "floor"], &opts)
}

/// floor + A/((f0² − f²)² + w²f²), the squared mechanical susceptibility
/// shape, whose integral over all positive f is A·π/(2f0²w).
pub fn susceptibility_shape(f: f64, center: f64, fwhm: f64, amplitude: f64, floor: f64) -> f64 {
    floor + amplitude / ((center * center - f * f).powi(2) + fwhm * fwhm * f * f)
}

/// Fits the squared-susceptibility lineshape. Reports `center`, `fwhm`,
/// `area` (above the floor, integrated over all positive f) and `floor`.
pub fn fit_susceptibility<U: PsdUnit>(spectrum: &Spectrum<U>) -> Result<FitResult> {
    let f = spectrum.freqs();
    let d = spectrum.values();
    let (f0, w, peak, floor) = peak_guess(f, d)?;
    require_span(f, f0, w, 5.0)?;
    let wt = relative_scale(d);
    let amp0 = peak * (w * f0).powi(2);
    let problem = FnResiduals {
        len: f.len(),
        f: |p: &[f64], out: &mut [f64]| {
            for i in 0..f.len() {
                out[i] = (susceptibility_shape(f[i], p[0], p[1], p[2] * amp0, p[3]) - d[i]) * wt[i];
            }
        },
    };
    let opts = LmOptions { typical: Some(vec![f0, w, 1.0, peak]), ..LmOptions::default() };
    let mut fit =
        levenberg_marquardt(&problem, &[f0, w, 1.0, floor], &["center", "fwhm", "amplitude", "floor"], &opts)?;
    let (c, fw) = (fit.params[0].value, fit.params[1].value);
    let k = amp0 * std::f64::consts::PI / (2.0 * c * c * fw);
    let a = &mut fit.params[2];
    a.name = "area".into();
    a.value *= k;
    a.stderr = a.stderr.map(|s| s * k);
    Ok(fit)
}

/// Conversion from detector volts to displacement, K·S_VV = S_yy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstant {
    /// m²/V²
    pub k: f64,
    pub anchor_occupancy: f64,
    /// Fitted background of the anchor spectrum, V²/Hz.
    pub floor: f64,
}

impl CalibrationConstant {
    pub fn to_displacement(&self, spectrum: &Spectrum<VoltsSq>) -> Result<Spectrum<MetersSq>> {
        spectrum.map_values(|_, v| v * self.k)
    }

    /// Calibrated spectrum with the anchor's background removed, clipped at zero.
    pub fn to_displacement_subtracted(&self, spectrum: &Spectrum<VoltsSq>) -> Result<Spectrum<MetersSq>> {
        spectrum.map_values(|_, v| ((v - self.floor) * self.k).max(0.0))
    }
}

/// Finds K such that the background-subtracted, K-scaled anchor spectrum
/// integrates to 2x_zpf²(n̄ + 1/2).
pub fn calibrate_anchor(
    spectrum: &Spectrum<VoltsSq>,
    occupancy: f64,
    mode: &MechanicalMode,
) -> Result<CalibrationConstant> {
    mode.validate()?;
    require_non_negative("occupancy", occupancy)?;
    let fit = fit_susceptibility(spectrum)?;
    let floor = fit.expect("floor");
    let lifted: Vec<f64> = spectrum.values().iter().map(|v| v - floor).collect();
    let area = integrate_resonance(spectrum.freqs(), &lifted)?;
    if !(area > 0.0) {
        return Err(Error::Domain { name: "background-subtracted area", value: area, constraint: "> 0" });
    }
    let x2 = mode.x_zpf().powi(2);
    Ok(CalibrationConstant { k: 2.0 * x2 * (occupancy + 0.5) / area, anchor_occupancy: occupancy, floor })
}

/// Quantities held fixed in a closed-loop spectrum fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopFixed {
    /// Mode with the anchor's Ω_tot and Γ_tot.
    pub mode: MechanicalMode,
    /// Bare mechanical damping, rad/s. Force noise and imprecision in
    /// quanta are referenced to it.
    pub bare_gamma: f64,
    pub n_tot: f64,
    /// Filter shape; its gain and phase are starting values.
    pub filter: FeedbackFilter,
}

impl ClosedLoopFixed {
    pub fn quanta(&self) -> Result<Quanta> {
        let bare = MechanicalMode { gamma_m: self.bare_gamma, ..self.mode };
        bare.validate()?;
        Ok(Quanta::for_mode(&bare))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopGuess {
    pub gain: f64,
    pub phase: f64,
    pub n_imp: f64,
}

/// In-loop model spectrum for given (G, φ, n_imp).
pub fn closed_loop_model(
    fixed: &ClosedLoopFixed,
    gain: f64,
    phase: f64,
    n_imp: f64,
) -> Result<LoopModel<FeedbackFilter>> {
    let filter = FeedbackFilter { gain, phase_offset: phase, ..fixed.filter.clone() };
    let cal = unit_gain_calibration(&fixed.mode, &filter)?;
    let q = fixed.quanta()?;
    LoopModel::new(fixed.mode, filter, cal, q.quanta_to_force(fixed.n_tot), q.quanta_to_imprecision(n_imp))
}

/// Fits the in-loop spectrum for the loop gain, phase offset and
/// imprecision (in quanta). The gain is bounded to [0, `gain_max`].
pub fn fit_closed_loop(
    spectrum: &Spectrum<MetersSq>,
    fixed: &ClosedLoopFixed,
    guess: ClosedLoopGuess,
    gain_max: f64,
) -> Result<FitResult> {
    fixed.mode.validate()?;
    fixed.filter.validate()?;
    require_positive("n_imp guess", guess.n_imp)?;
    require_positive("gain_max", gain_max)?;
    let f = spectrum.freqs();
    let d = spectrum.values();
    let wt = relative_scale(d);
    let q = fixed.quanta()?;
    let s_ff = q.quanta_to_force(fixed.n_tot);
    let s_xzp_half = q.quanta_to_imprecision(1.0);
    let base = closed_loop_model(fixed, 1.0, 0.0, guess.n_imp)?;
    let problem = FnResiduals {
        len: f.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let mut m = base.with_gain(p[0]);
            m.filter.phase_offset = p[1];
            m.s_ff_tot = s_ff;
            m.s_xx_imp = p[2] * s_xzp_half;
            for i in 0..f.len() {
                out[i] = (m.s_yy(TWO_PI * f[i]) - d[i]) * wt[i];
            }
        },
    };
    let opts = LmOptions {
        bounds: Some(vec![
            (0.0, gain_max),
            (-4.0 * std::f64::consts::PI, 4.0 * std::f64::consts::PI),
            (0.0, f64::INFINITY),
        ]),
        typical: Some(vec![guess.gain.max(1.0), 1.0, guess.n_imp]),
        ..LmOptions::default()
    };
    levenberg_marquardt(&problem, &[guess.gain, guess.phase, guess.n_imp], &["gain", "phase", "n_imp"], &opts)
}

/// Zero-intercept line through fitted loop gains versus electronic gain.
pub fn fit_gain_series(electronic: &[f64], fitted: &[f64], stderr: Option<&[f64]>) -> Result<FitResult> {
    if electronic.len() != fitted.len() {
        return Err(Error::input("gain series lengths differ"));
    }
    let w: Option<Vec<f64>> = stderr.map(|s| s.iter().map(|e| 1.0 / (e * e)).collect());
    fit_proportional(electronic, fitted, w.as_deref())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatingModelKind {
    DbaOnly,
    DbaHeating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatingModel {
    /// rad/s per W
    pub a_dba: f64,
    /// 1/W
    pub a_eh: f64,
    /// rad/s
    pub gamma0: f64,
    pub area0: f64,
}

impl HeatingModel {
    /// (A/A0)⁻¹ at input power `p`.
    pub fn inverse_area(&self, p: f64) -> f64 {
        (self.a_dba * p + self.gamma0) / ((1.0 + self.a_eh * p) * self.gamma0)
    }
}

/// One mechanical-area measurement at a cooling-beam input power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaPoint {
    /// W
    pub power: f64,
    pub area: f64,
    /// Standard error of the area, if known.
    pub stderr: Option<f64>,
}

/// Fits the inverse normalized area A0/A versus power. `area0` and
/// `gamma0` belong to the reference point and are held fixed.
pub fn fit_inverse_area(
    points: &[AreaPoint],
    area0: f64,
    gamma0: f64,
    kind: HeatingModelKind,
) -> Result<(HeatingModel, FitResult)> {
    require_positive("area0", area0)?;
    require_positive("gamma0", gamma0)?;
    if points.len() < 3 {
        return Err(Error::input("at least three area points are needed"));
    }
    for p in points {
        require_non_negative("power", p.power)?;
        require_positive("area", p.area)?;
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.power).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    let need = match kind {
        HeatingModelKind::DbaOnly => 1,
        HeatingModelKind::DbaHeating => 2,
    };
    if powers.iter().filter(|&&p| p > 0.0).count() < need {
        return Err(Error::RankDeficient(format!("need at least {need} distinct non-zero powers")));
    }
    let y: Vec<f64> = points.iter().map(|p| area0 / p.area).collect();
    let sigma: Vec<f64> = points.iter().zip(&y).map(|(p, &yi)| p.stderr.map_or(1.0, |s| yi * s / p.area)).collect();
    let x: Vec<f64> = points.iter().map(|p| p.power / gamma0).collect();
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let ym1: Vec<f64> = y.iter().map(|v| v - 1.0).collect();
    let lin = fit_proportional(&x, &ym1, Some(&w))?;
    let a_dba0 = lin.expect("slope");
    let mut model = HeatingModel { a_dba: a_dba0, a_eh: 0.0, gamma0, area0 };
    let fit = match kind {
        HeatingModelKind::DbaOnly => {
            let mut fit = lin;
            fit.params[0].name = "a_dba".into();
            fit
        }
        HeatingModelKind::DbaHeating => {
            let pw: Vec<f64> = points.iter().map(|p| p.power).collect();
            let problem = FnResiduals {
                len: y.len(),
                f: |p: &[f64], out: &mut [f64]| {
                    let m = HeatingModel { a_dba: p[0], a_eh: p[1], gamma0, area0 };
                    for i in 0..y.len() {
                        out[i] = (m.inverse_area(pw[i]) - y[i]) / sigma[i];
                    }
                },
            };
            let pmax = pw.iter().cloned().fold(0.0, f64::max);
            let opts =
                LmOptions { typical: Some(vec![a_dba0.abs().max(gamma0 / pmax), 1.0 / pmax]), ..LmOptions::default() };
            let fit = levenberg_marquardt(&problem, &[a_dba0, 0.0], &["a_dba", "a_eh"], &opts)?;
            if fit.covariance.is_none() {
                return Err(Error::RankDeficient("heating model is not determined by the data".into()));
            }
            model.a_dba = fit.expect("a_dba");
            model.a_eh = fit.expect("a_eh");
            fit
        }
    };
    Ok((model, fit))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasMaterial {
    /// kg/m³
    pub density: f64,
    /// m
    pub thickness: f64,
    /// kg/mol
    pub molar_mass: f64,
    /// K
    pub temperature: f64,
}

impl GasMaterial {
    /// Silicon nitride membrane of the given thickness in room-temperature air.
    pub fn silicon_nitride_in_air(thickness: f64) -> Self {
        Self { density: 3170.0, thickness, molar_mass: 28.97e-3, temperature: 300.0 }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("density", self.density)?;
        require_positive("thickness", self.thickness)?;
        require_positive("molar_mass", self.molar_mass)?;
        require_positive("temperature", self.temperature)
    }

    /// Gas-damping quality factor at pressure `p` (Pa).
    pub fn q_gas(&self, omega_m: f64, p: f64) -> f64 {
        self.density * self.thickness * omega_m / 4.0
            * (std::f64::consts::PI / 2.0).sqrt()
            * (R_GAS * self.temperature / self.molar_mass).sqrt()
            / p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasDampingModel {
    pub q0: f64,
    pub a_q: f64,
    pub material: GasMaterial,
    /// rad/s
    pub omega_m: f64,
}

impl GasDampingModel {
    pub fn q(&self, p: f64) -> f64 {
        1.0 / (1.0 / self.q0 + self.a_q / self.material.q_gas(self.omega_m, p))
    }
}

/// Linear fit of 1/Q against 1/Q_D(p). Points are (pressure in Pa, Q).
pub fn fit_q_vs_pressure(
    points: &[(f64, f64)],
    material: GasMaterial,
    omega_m: f64,
) -> Result<(GasDampingModel, FitResult)> {
    material.validate()?;
    require_positive("omega_m", omega_m)?;
    if points.len() < 2 {
        return Err(Error::input("at least two pressure points are needed"));
    }
    for &(p, q) in points {
        require_positive("pressure", p)?;
        require_positive("Q", q)?;
    }
    let m = points.len();
    let mut design = DMatrix::zeros(m, 2);
    let mut y = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for (i, &(p, q)) in points.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = 1.0 / material.q_gas(omega_m, p);
        y.push(1.0 / q);
        w.push(q * q);
    }
    let lin = linear_least_squares(&design, &y, Some(&w), &["inv_q0", "a_q"])?;
    let inv_q0 = lin.expect("inv_q0");
    if !(inv_q0 > 0.0) {
        return Err(Error::Domain { name: "1/Q0", value: inv_q0, constraint: "> 0" });
    }
    let model = GasDampingModel { q0: 1.0 / inv_q0, a_q: lin.expect("a_q"), material, omega_m };
    let mut fit = lin;
    let p0 = &mut fit.params[0];
    p0.name = "q0".into();
    p0.stderr = p0.stderr.map(|s| s / (inv_q0 * inv_q0));
    p0.value = model.q0;
    Ok((model, fit))
}

/// Reflected power of a fiber cavity: η_r − η_L(1/(1+υ²) − 𝒜υ/(1+υ²)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionModel {
    pub eta_r: f64,
    pub eta_l: f64,
    pub asym: f64,
    /// rad/s
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionCurve {
    /// rad/s
    pub detuning: Vec<f64>,
    pub total: Vec<f64>,
    /// Depth of the symmetric part, η_L/(1+υ²).
    pub lorentzian: Vec<f64>,
    /// Dispersive part η_L𝒜υ/(1+υ²).
    pub dispersive: Vec<f64>,
}

impl ReflectionCurve {
    /// Integral of the dispersive part over the scan (zero on a symmetric scan).
    pub fn dispersive_area(&self) -> f64 {
        integrate_nonuniform(&self.detuning, &self.dispersive)
    }

    pub fn dip_area(&self) -> f64 {
        integrate_nonuniform(&self.detuning, &self.lorentzian)
    }
}

fn integrate_nonuniform(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

impl ReflectionModel {
    pub fn validate(&self) -> Result<()> {
        require_unit_interval("eta_r", self.eta_r)?;
        require_non_negative("eta_l", self.eta_l)?;
        require_positive("kappa", self.kappa)?;
        if self.eta_r - self.eta_l < 0.0 {
            return Err(Error::Domain { name: "eta_r - eta_l", value: self.eta_r - self.eta_l, constraint: ">= 0" });
        }
        if !self.asym.is_finite() {
            return Err(Error::input("asymmetry must be finite"));
        }
        Ok(())
    }

    pub fn eval(&self, detuning: f64) -> f64 {
        let u = 2.0 * detuning / self.kappa;
        let d = 1.0 + u * u;
        self.eta_r - self.eta_l * (1.0 / d - self.asym * u / d)
    }
}

pub fn reflection_dip(model: &ReflectionModel, detunings: &[f64]) -> Result<ReflectionCurve> {
    model.validate()?;
    let mut c = ReflectionCurve {
        detuning: detunings.to_vec(),
        total: Vec::with_capacity(detunings.len()),
        lorentzian: Vec::with_capacity(detunings.len()),
        dispersive: Vec::with_capacity(detunings.len()),
    };
    for &dl in detunings {
        let u = 2.0 * dl / model.kappa;
        let lor = model.eta_l / (1.0 + u * u);
        let disp = model.eta_l * model.asym * u / (1.0 + u * u);
        c.total.push(model.eta_r - lor + disp);
        c.lorentzian.push(lor);
        c.dispersive.push(disp);
    }
    Ok(c)
}

/// Fits κ, η_L and 𝒜 to a reflection scan (detunings in rad/s) with the
/// off-resonance level held at `eta_r`.
pub fn fit_reflection_dip(detunings: &[f64], reflection: &[f64], eta_r: f64) -> Result<FitResult> {
    require_unit_interval("eta_r", eta_r)?;
    if detunings.len() != reflection.len() || detunings.len() < 4 {
        return Err(Error::input("reflection scan needs matching detuning and value arrays"));
    }
    if detunings.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("detunings must be strictly increasing"));
    }
    let depth: Vec<f64> = reflection.iter().map(|r| eta_r - r).collect();
    let (imax, &dmax) = depth.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    if !(dmax > 0.0) {
        return Err(Error::RankDeficient("scan shows no dip below the off-resonance level".into()));
    }
    let half = 0.5 * dmax;
    let r = (imax..depth.len()).find(|&i| depth[i] < half);
    let l = (0..=imax).rev().find(|&i| depth[i] < half);
    let kappa0 = match (l, r) {
        (Some(l), Some(r)) => detunings[r] - detunings[l],
        _ => return Err(Error::input("dip is not resolved inside the scan")),
    };
    let span = detunings[detunings.len() - 1] - detunings[0];
    if span < 5.0 * 0.5 * kappa0 {
        return Err(Error::input("scan spans fewer than five linewidths"));
    }
    let problem = FnResiduals {
        len: detunings.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let m = ReflectionModel { eta_r, eta_l: p[1], asym: p[2], kappa: p[0] };
            for i in 0..detunings.len() {
                out[i] = m.eval(detunings[i]) - reflection[i];
            }
        },
    };
    let opts = LmOptions { typical: Some(vec![kappa0, dmax, 1.0]), ..LmOptions::default() };
    let mut fit = levenberg_marquardt(&problem, &[kappa0, dmax, 0.0], &["kappa", "eta_l", "asym"], &opts)?;
    let k = &mut fit.params[0];
    k.value = k.value.abs();
    Ok(fit)
}

/// Calibration of a voltage spectrum into cavity phase, frequency and
/// displacement noise using a phase-modulation tone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyNoiseCal {
    /// Locked/unlocked tone ratio, (1 − 2Λ)².
    pub ratio: f64,
    /// Both solutions for Λ, ascending.
    pub lambda_roots: [f64; 2],
    /// Tone modulation depth φ0, rad.
    pub phi_mod: f64,
    /// rad/s
    pub omega_mod: f64,
    /// rad/s
    pub kappa: f64,
}

pub fn frequency_noise_calibration(ratio: f64, phi_mod: f64, omega_mod: f64, kappa: f64) -> Result<FrequencyNoiseCal> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain { name: "ratio", value: ratio, constraint: "in [0, 1]" });
    }
    require_positive("phi_mod", phi_mod)?;
    require_positive("omega_mod", omega_mod)?;
    require_positive("kappa", kappa)?;
    let r = ratio.sqrt();
    Ok(FrequencyNoiseCal { ratio, lambda_roots: [(1.0 - r) / 2.0, (1.0 + r) / 2.0], phi_mod, omega_mod, kappa })
}

impl FrequencyNoiseCal {
    /// The root giving the larger inferred noise.
    pub fn conservative_lambda(&self) -> f64 {
        self.lambda_roots[0]
    }

    /// Volts² per rad² from the locked tone area (V²).
    pub fn volts_per_phase(&self, tone_area: f64) -> Result<f64> {
        require_positive("tone_area", tone_area)?;
        if self.ratio == 0.0 {
            return Err(Error::DivisionByZero("tone is fully suppressed when locked".into()));
        }
        Ok(tone_area / (self.ratio * self.phi_mod * self.phi_mod))
    }

    pub fn phase_psd(&self, s_vv: &Spectrum<VoltsSq>, tone_area: f64) -> Result<Spectrum<Normalized>> {
        let c = self.volts_per_phase(tone_area)?;
        s_vv.map_values(|_, v| v / c)
    }

    pub fn frequency_psd(&self, s_phi: &Spectrum<Normalized>, lambda: f64) -> Result<Spectrum<AngularFrequencySq>> {
        require_positive("lambda", lambda)?;
        let k = self.kappa * self.kappa / (16.0 * lambda * lambda);
        s_phi.map_values(|_, v| v * k)
    }

    /// Displacement-equivalent noise via the frequency pull g0/x_zpf.
    pub fn displacement_psd(
        &self,
        s_ww: &Spectrum<AngularFrequencySq>,
        g0: f64,
        x_zpf: f64,
    ) -> Result<Spectrum<MetersSq>> {
        require_positive("g0", g0)?;
        require_positive("x_zpf", x_zpf)?;
        let pull = g0 / x_zpf;
        s_ww.map_values(|_, v| v / (pull * pull))
    }

    pub fn calibrate(
        &self,
        s_vv: &Spectrum<VoltsSq>,
        tone_area: f64,
        lambda: f64,
        g0: f64,
        x_zpf: f64,
    ) -> Result<Spectrum<MetersSq>> {
        let phi = self.phase_psd(s_vv, tone_area)?;
        let w = self.frequency_psd(&phi, lambda)?;
        self.displacement_psd(&w, g0, x_zpf)
    }
}

/// Area of a narrow tone above the local median floor, integrated over
/// ±`half_width` Hz around `freq`.
pub fn tone_area<U: PsdUnit>(spectrum: &Spectrum<U>, freq: f64, half_width: f64) -> Result<f64> {
    require_positive("half_width", half_width)?;
    let f = spectrum.freqs();
    let v = spectrum.values();
    let idx: Vec<usize> = (0..f.len()).filter(|&i| (f[i] - freq).abs() <= half_width).collect();
    if idx.len() < 3 {
        return Err(Error::input("tone window holds fewer than three samples"));
    }
    let mut window: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let mut sorted = window.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    for x in &mut window {
        *x -= floor;
    }
    Ok(trapezoid(&window, spectrum.df()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;
    use crate::feedback::{closed_loop_displacement_psd, inloop_psd, occupancy_from_psd, tune_phase, ColdDamping};
    use crate::spectrum::FrequencyGrid;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn lorentzian_noiseless() {
        let grid = FrequencyGrid::centered(1.3e6, 1.5e3, 3001).unwrap();
        let vals = (0..grid.len).map(|i| lorentzian(grid.freq(i), 1.3e6 + 3.0, 52.0, 2e-20, 3e-25)).collect();
        let s: Spectrum<MetersSq> = Spectrum::on_grid(&grid, vals).unwrap();
        let fit = fit_lorentzian(&s).unwrap();
        assert!(fit.converged);
        assert!(rel(fit.expect("center"), 1.3e6 + 3.0) < 1e-8);
        assert!(rel(fit.expect("fwhm"), 52.0) < 1e-8);
        assert!(rel(fit.expect("area"), 2e-20) < 1e-8);
        assert!(rel(fit.expect("floor"), 3e-25) < 1e-8);
    }

    #[test]
    fn flat_spectrum_is_flagged() {
        let grid = FrequencyGrid::centered(1.3e6, 1e3, 501).unwrap();
        let s: Spectrum<VoltsSq> = Spectrum::on_grid(&grid, vec![1e-12; grid.len]).unwrap();
        assert!(matches!(fit_lorentzian(&s), Err(Error::RankDeficient(_))));
    }

    fn anchor_mode() -> MechanicalMode {
        MechanicalMode::new(hz_to_angular(1.3e6), hz_to_angular(52.0), 2e-13, 300.0).unwrap()
    }

    fn anchor_spectrum(n: f64, k_true: f64) -> (Spectrum<VoltsSq>, f64) {
        let mode = anchor_mode();
        let q = Quanta::for_mode(&mode);
        let model = LoopModel::new(
            mode,
            ColdDamping::for_mode(&mode, 0.0),
            1.0,
            q.quanta_to_force(n + 0.5),
            q.quanta_to_imprecision(0.02),
        )
        .unwrap();
        let grid = model.auto_grid(300.0, 25.0).unwrap();
        let sxx = closed_loop_displacement_psd(&model, &grid).unwrap();
        let n_true = occupancy_from_psd(&sxx, mode.x_zpf()).unwrap();
        let syy = inloop_psd(&model, &grid).unwrap();
        (syy.scaled(1.0 / k_true).unwrap().relabel(), n_true)
    }

    #[test]
    fn anchor_round_trip() {
        let mode = anchor_mode();
        let (svv, n_true) = anchor_spectrum(1070.0, 3.7e-9);
        let cal = calibrate_anchor(&svv, n_true, &mode).unwrap();
        assert!(rel(cal.k, 3.7e-9) < 1e-6, "{}", cal.k);
        let back = occupancy_from_psd(&cal.to_displacement_subtracted(&svv).unwrap(), mode.x_zpf()).unwrap();
        assert!(rel(back, n_true) < 1e-9);

        let doubled = calibrate_anchor(&svv.scaled(2.0).unwrap(), n_true, &mode).unwrap();
        assert!(rel(doubled.k, cal.k / 2.0) < 1e-9);
    }

    #[test]
    fn susceptibility_area() {
        let (svv, _) = anchor_spectrum(500.0, 1.0);
        let fit = fit_susceptibility(&svv).unwrap();
        let floor = fit.expect("floor");
        let lifted: Vec<f64> = svv.values().iter().map(|v| v - floor).collect();
        let numeric = integrate_resonance(svv.freqs(), &lifted).unwrap();
        assert!(rel(fit.expect("area"), numeric) < 1e-7);
    }

    fn loop_fixed() -> ClosedLoopFixed {
        let mode = anchor_mode();
        let mut filter = FeedbackFilter {
            gain: 1.0,
            phase_offset: 0.0,
            delay: 300e-9,
            main_center: hz_to_angular(1.34e6),
            main_bandwidth: hz_to_angular(77.86e3),
            aux_stages: Vec::new(),
        };
        filter.phase_offset = tune_phase(&filter, mode.omega_m).unwrap();
        ClosedLoopFixed { mode, bare_gamma: hz_to_angular(9e-3), n_tot: 1070.5 * 52.0 / 9e-3, filter }
    }

    #[test]
    fn closed_loop_noiseless() {
        let fixed = loop_fixed();
        let phi0 = fixed.filter.phase_offset;
        let truth = closed_loop_model(&fixed, 12.0, phi0 + 0.1, 3.2e-5).unwrap();
        let grid = FrequencyGrid::centered(1.3e6, 10e3, 2001).unwrap();
        let s = inloop_psd(&truth, &grid).unwrap();
        let fit = fit_closed_loop(&s, &fixed, ClosedLoopGuess { gain: 8.0, phase: phi0, n_imp: 5e-5 }, 1e3).unwrap();
        assert!(rel(fit.expect("gain"), 12.0) < 1e-8);
        assert!((fit.expect("phase") - phi0 - 0.1).abs() < 1e-8);
        assert!(rel(fit.expect("n_imp"), 3.2e-5) < 1e-8);
    }

    #[test]
    fn heating_zero_power_and_noiseless() {
        let m = HeatingModel { a_dba: 2e5, a_eh: 100.0, gamma0: hz_to_angular(50.0), area0: 1.0 };
        assert_eq!(m.inverse_area(0.0), 1.0);
        let pts: Vec<AreaPoint> = (0..8)
            .map(|i| {
                let p = i as f64 * 100e-6;
                AreaPoint { power: p, area: 1.0 / m.inverse_area(p), stderr: None }
            })
            .collect();
        let (fit_m, _) = fit_inverse_area(&pts, 1.0, m.gamma0, HeatingModelKind::DbaHeating).unwrap();
        assert!(rel(fit_m.a_dba, m.a_dba) < 1e-8);
        assert!(rel(fit_m.a_eh, m.a_eh) < 1e-8);
        let same: Vec<AreaPoint> = (0..4).map(|_| AreaPoint { power: 0.0, area: 1.0, stderr: None }).collect();
        assert!(matches!(
            fit_inverse_area(&same, 1.0, m.gamma0, HeatingModelKind::DbaOnly),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn gas_damping_formula() {
        let mat = GasMaterial::silicon_nitride_in_air(15e-9);
        let qd = mat.q_gas(hz_to_angular(1.3e6), 2e-5);
        assert!(rel(qd, 1_785_447_833.809_465_3) < 1e-10, "{qd}");
    }

    #[test]
    fn gas_damping_vacuum_limit_and_fit() {
        let mat = GasMaterial::silicon_nitride_in_air(15e-9);
        let w = hz_to_angular(1.3e6);
        let model = GasDampingModel { q0: 1.4e8, a_q: 1.3, material: mat, omega_m: w };
        assert!(rel(model.q(1e-15), 1.4e8) < 1e-6);
        let pts: Vec<(f64, f64)> = [1e-6, 3e-6, 1e-5, 3e-5, 1e-4].iter().map(|&p| (p, model.q(p))).collect();
        let (fit, _) = fit_q_vs_pressure(&pts, mat, w).unwrap();
        assert!(rel(fit.q0, 1.4e8) < 1e-8 && rel(fit.a_q, 1.3) < 1e-8);
        let flat = vec![(1e-5, 1e8), (1e-5, 1.01e8)];
        assert!(matches!(fit_q_vs_pressure(&flat, mat, w), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn reflection_shape() {
        let m = ReflectionModel { eta_r: 0.9, eta_l: 0.5, asym: 0.3, kappa: hz_to_angular(340e6) };
        assert!(rel(m.eval(0.0), 0.4) < 1e-15);
        assert!((m.eval(1e6 * m.kappa) - 0.9).abs() < 1e-6);
        let det: Vec<f64> = (-200..=200).map(|i| i as f64 * m.kappa / 20.0).collect();
        let c = reflection_dip(&ReflectionModel { asym: 0.0, ..m }, &det).unwrap();
        assert_eq!(c.dispersive_area(), 0.0);
        let c = reflection_dip(&m, &det).unwrap();
        assert!(c.dispersive_area().abs() < 1e-12 * c.dip_area());
        for i in 0..det.len() {
            assert!((c.total[i] - (m.eta_r - c.lorentzian[i] + c.dispersive[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn reflection_fit_noiseless_and_mirror() {
        let m = ReflectionModel { eta_r: 0.92, eta_l: 0.55, asym: 0.2, kappa: hz_to_angular(340e6) };
        let det: Vec<f64> = (-300..=300).map(|i| i as f64 * m.kappa / 60.0).collect();
        let r: Vec<f64> = det.iter().map(|&d| m.eval(d)).collect();
        let fit = fit_reflection_dip(&det, &r, 0.92).unwrap();
        assert!(rel(fit.expect("kappa"), m.kappa) < 1e-8);
        assert!(rel(fit.expect("eta_l"), 0.55) < 1e-8);
        assert!(rel(fit.expect("asym"), 0.2) < 1e-8);
        let mirrored: Vec<f64> = det.iter().map(|&d| m.eval(-d)).collect();
        let fm = fit_reflection_dip(&det, &mirrored, 0.92).unwrap();
        assert!(rel(fm.expect("asym").abs(), 0.2) < 1e-8);
        assert!(fm.expect("asym") < 0.0);
    }

    #[test]
    fn lambda_roots() {
        let w = hz_to_angular(2.2e6);
        let k = hz_to_angular(340e6);
        let c = frequency_noise_calibration(0.0, 0.1, w, k).unwrap();
        assert_eq!(c.lambda_roots, [0.5, 0.5]);
        let c = frequency_noise_calibration(1.0, 0.1, w, k).unwrap();
        assert_eq!(c.lambda_roots, [0.0, 1.0]);
        assert!(matches!(frequency_noise_calibration(1.2, 0.1, w, k), Err(Error::Domain { .. })));
        let c = frequency_noise_calibration(0.36, 0.1, w, k).unwrap();
        for l in c.lambda_roots {
            assert!(((1.0 - 2.0 * l).powi(2) - 0.36).abs() < 1e-15);
        }
        assert_eq!(c.conservative_lambda(), 0.2);
    }
}
