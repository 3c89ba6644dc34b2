//! The cooling budget of an experiment: derived quantities, backaction,
//! limits, imprecision and the predicted closed-loop floor.

use mimcool_core::backaction::{optical_damping, optical_spring, total_backaction, BackactionResult};
use mimcool_core::feedback::{
    cold_damping_occupancy, instability_threshold, optimal_gain, tune_phase, unit_gain_calibration, FeedbackFilter,
    LoopModel,
};
use mimcool_core::limits::{
    feedback_min_occupancy_basic, feedback_min_occupancy_full, imprecision_budget, min_sideband_occupancy,
    optimal_detuning, sideband_occupancy, ImprecisionBudget, ImprecisionInputs, Quanta,
};
use mimcool_core::params::{coupling_for_cooperativity, detection_efficiency, g0_max, intracavity_photons};
use mimcool_core::tin::tin_budget;
use mimcool_core::{BeamRole, DetectionChain, FiberLossConvention, MechanicalMode, OpticalBeam, Result};
use mimcool_sim::SimConfig;

use crate::config::Experiment;
use crate::report::{Report, Section};

impl Experiment {
    /// Probe beam with the coupling set by its cooperativity.
    pub fn probe_beam(&self) -> OpticalBeam {
        OpticalBeam {
            power_in: self.probe.power,
            detuning: self.probe.detuning,
            g: coupling_for_cooperativity(self.probe.cooperativity, self.cavity.kappa, self.mode.decoherence_rate()),
            role: BeamRole::Probe,
        }
    }

    /// Measured overall efficiency if given, else the chain product.
    pub fn eta_det(&self) -> Result<f64> {
        match self.eta_det_measured {
            Some(eta) => Ok(eta),
            None => detection_efficiency(&self.detection),
        }
    }

    pub fn backaction(&self) -> Result<BackactionResult> {
        total_backaction(&self.mode, &[self.cooling, self.probe_beam()], self.cavity.kappa)
    }

    /// Cooling-beam damping Γ_c inferred from the measured total linewidth.
    pub fn measured_cooling_damping(&self) -> f64 {
        self.anchor.gamma_tot - self.anchor.probe_damping - self.mode.gamma_m
    }

    /// Occupancy of the sideband-cooled anchor spectrum.
    pub fn anchor_occupancy(&self) -> Result<f64> {
        let n_c = min_sideband_occupancy(self.cooling.detuning, self.cavity.kappa, self.mode.omega_m)?.value();
        Ok(sideband_occupancy(
            self.mode.n_th(),
            self.mode.gamma_m,
            self.probe.cooperativity,
            n_c,
            self.measured_cooling_damping(),
            self.anchor.gamma_tot,
        )?
        .value())
    }

    /// Total force noise in quanta of the bare mode, n̄·Γ_tot/Γ_m.
    pub fn bare_force_quanta(&self) -> Result<f64> {
        Ok(self.anchor_occupancy()? * self.anchor.gamma_tot / self.mode.gamma_m)
    }

    pub fn imprecision(&self) -> Result<ImprecisionBudget> {
        imprecision_budget(
            &self.mode,
            &ImprecisionInputs {
                c_q: self.probe.cooperativity,
                eta_det: self.eta_det()?,
                g0: self.coupling.g0,
                s_omega_omega: self.noise.s_omega_omega,
                s_xx_mirror: self.noise.s_xx_mirror,
            },
        )
    }

    /// The mode as seen by the feedback loop: shifted by the optical spring
    /// and broadened to the measured total linewidth.
    pub fn loop_mode(&self) -> Result<MechanicalMode> {
        let ba = self.backaction()?;
        MechanicalMode::new(
            self.mode.omega_m + ba.delta_omega,
            self.anchor.gamma_tot,
            self.mode.m_eff,
            self.mode.temperature,
        )
    }

    /// Feedback filter at unit gain with the configured or tuned phase.
    pub fn feedback_filter(&self, omega_target: f64) -> Result<FeedbackFilter> {
        let f = &self.filter;
        let mut filter = FeedbackFilter {
            gain: 1.0,
            phase_offset: 0.0,
            delay: f.delay,
            main_center: f.center,
            main_bandwidth: f.bandwidth,
            aux_stages: f.aux.iter().copied().collect(),
        };
        filter.phase_offset = match f.phase {
            Some(p) => p,
            None => tune_phase(&filter, omega_target)?,
        };
        Ok(filter)
    }

    /// Closed-loop model with the fitted excess imprecision, at unit gain.
    pub fn loop_model(&self) -> Result<LoopModel<FeedbackFilter>> {
        let mode = self.loop_mode()?;
        let q = Quanta::for_mode(&self.mode);
        let filter = self.feedback_filter(mode.omega_m)?;
        let cal = unit_gain_calibration(&mode, &filter)?;
        LoopModel::new(
            mode,
            filter,
            cal,
            q.quanta_to_force(self.bare_force_quanta()?),
            q.quanta_to_imprecision(self.noise.n_imp_fit),
        )
    }

    /// Desk-scale simulation scenario at the configured gain and seed.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulation;
        let omega = self.mode.omega_m;
        let temperature = s.n_th * mimcool_core::constants::HBAR * omega / mimcool_core::constants::K_B;
        let mode = MechanicalMode::new(omega, s.gamma, self.mode.m_eff, temperature)?;
        let q = Quanta::for_mode(&mode);
        let mut filter = FeedbackFilter {
            gain: s.gain,
            phase_offset: 0.0,
            delay: s.delay,
            main_center: omega,
            main_bandwidth: s.bandwidth,
            aux_stages: Vec::new(),
        };
        filter.phase_offset = tune_phase(&filter, omega)?;
        let calibration = unit_gain_calibration(&mode, &filter)?;
        let f_hz = omega / mimcool_core::constants::TWO_PI;
        Ok(SimConfig {
            dt: 1.0 / (s.samples_per_period as f64 * f_hz),
            duration: s.duration,
            settle: 0.0,
            seed: s.seed,
            mode,
            filter,
            calibration,
            s_ff_tot: q.quanta_to_force(s.n_th + 0.5),
            s_xx_imp: q.quanta_to_imprecision(s.n_imp),
        }
        .with_settling(s.settle))
    }
}

/// Gain and occupancy at the minimum of the integrated closed-loop
/// occupancy, searched up to `gain_max` and below any instability.
pub fn minimize_over_gain(model: &LoopModel<FeedbackFilter>, guess: f64, gain_max: f64) -> Result<(f64, f64)> {
    let upper = instability_threshold(model).map_or(gain_max, |t| t.min(gain_max)) * 0.999;
    let lo = (guess / 100.0).max(1e-3).min(upper / 10.0).ln();
    let hi = (guess * 30.0).min(upper).ln();
    let n_at = |lg: f64| model.with_gain(lg.exp()).occupancy().unwrap_or(f64::INFINITY);
    let points = 60;
    let lgs: Vec<f64> = (0..=points).map(|i| lo + (hi - lo) * i as f64 / points as f64).collect();
    let ns: Vec<f64> = lgs.iter().map(|&lg| n_at(lg)).collect();
    let best = ns.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("scan is not empty");
    if !ns[best].is_finite() {
        return Err(mimcool_core::Error::Unstable("no stable gain in the searched range".into()));
    }
    let (mut a, mut b) = (lgs[best.saturating_sub(1)], lgs[(best + 1).min(points)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (n_at(c), n_at(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = n_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = n_at(d);
        }
    }
    let lg = 0.5 * (a + b);
    let (g, n) = (lg.exp(), n_at(lg));
    if n <= ns[best] {
        Ok((g, n))
    } else {
        Ok((lgs[best].exp(), ns[best]))
    }
}

pub fn derived_section(e: &Experiment) -> Result<Section> {
    let m = &e.mode;
    let mut s = Section::new();
    s.add("x_zpf", m.x_zpf(), "m")
        .add("q_factor", m.q_factor(), "")
        .add("n_th", m.n_th(), "quanta")
        .hz("gamma_decoherence", m.decoherence_rate())
        .add("s_xzp", m.zero_point_peak_psd(), "m^2/Hz")
        .add("finesse", e.cavity.finesse(), "")
        .add("free_spectral_range", e.cavity.free_spectral_range_hz(), "Hz")
        .hz("g0_max", g0_max(&e.cavity, m, &e.coupling)?)
        .add("cooling_intracavity_photons", intracavity_photons(&e.cavity, &e.cooling)?, "")
        .hz("cooling_g", e.cooling.g)
        .add("cooling_cooperativity", e.cooling.cooperativity(e.cavity.kappa, m.decoherence_rate()), "")
        .hz("probe_g", e.probe_beam().g)
        .add("probe_cooperativity", e.probe.cooperativity, "")
        .add("eta_det", e.eta_det()?, "")
        .add("eta_det_chain", detection_efficiency(&e.detection)?, "");
    let other = DetectionChain {
        convention: match e.detection.convention {
            FiberLossConvention::Power => FiberLossConvention::Amplitude,
            FiberLossConvention::Amplitude => FiberLossConvention::Power,
        },
        ..e.detection
    };
    s.add("eta_det_chain_other_convention", detection_efficiency(&other)?, "");
    let g_power = e.coupling.g0 * intracavity_photons(&e.cavity, &e.cooling)?.sqrt();
    s.hz("cooling_g_from_power", g_power);
    if e.cooling_g_given {
        s.add("cooling_coupled_fraction_implied", (e.cooling.g / g_power).powi(2), "");
    }
    if let Some(f) = e.finesse_quoted {
        s.add("finesse_quoted", f, "").add("kappa_from_quoted_finesse", e.cavity.free_spectral_range_hz() / f, "Hz");
    }
    Ok(s)
}

pub fn backaction_section(e: &Experiment) -> Result<Section> {
    let (k, w) = (e.cavity.kappa, e.mode.omega_m);
    let p = e.probe_beam();
    let ba = e.backaction()?;
    let mut s = Section::new();
    s.hz("cooling_spring", optical_spring(e.cooling.g, e.cooling.detuning, k, w))
        .hz("cooling_damping", optical_damping(e.cooling.g, e.cooling.detuning, k, w))
        .hz("probe_spring", optical_spring(p.g, p.detuning, k, w))
        .hz("probe_damping", optical_damping(p.g, p.detuning, k, w))
        .hz("total_spring", ba.delta_omega)
        .hz("total_optical_damping", ba.gamma_opt)
        .hz("gamma_total", ba.gamma_total)
        .hz("omega_total", w + ba.delta_omega)
        .hz("measured_gamma_total", e.anchor.gamma_tot)
        .hz("measured_probe_damping", e.anchor.probe_damping)
        .hz("measured_cooling_damping", e.measured_cooling_damping());
    Ok(s)
}

pub fn limits_section(e: &Experiment) -> Result<Section> {
    let (k, w) = (e.cavity.kappa, e.mode.omega_m);
    let opt = optimal_detuning(k, w)?;
    let budget = e.imprecision()?;
    let m = &e.mode;
    let n_tot = e.bare_force_quanta()?;
    let q = Quanta::for_mode(m);
    let fitted = feedback_min_occupancy_basic(q.quanta_to_force(n_tot), q.quanta_to_imprecision(e.noise.n_imp_fit))?;
    let mut s = Section::new();
    s.add("sideband_min_at_cooling_detuning", min_sideband_occupancy(e.cooling.detuning, k, w)?.value(), "quanta")
        .add("sideband_min_at_half_kappa", min_sideband_occupancy(-0.5 * k, k, w)?.value(), "quanta")
        .hz("optimal_detuning_analytic", opt.analytic)
        .hz("optimal_detuning_numeric", opt.numeric)
        .add("sideband_min_at_optimal_detuning", opt.n_min, "quanta")
        .add("anchor_occupancy", e.anchor_occupancy()?, "quanta")
        .add("bare_force_noise", n_tot, "quanta")
        .add(
            "feedback_floor_quantum",
            feedback_min_occupancy_full(e.probe.cooperativity, e.eta_det()?, 0.0, m.n_th(), m.gamma_m, m.x_zpf())?
                .value(),
            "quanta",
        )
        .add(
            "feedback_floor_classical",
            feedback_min_occupancy_full(
                e.probe.cooperativity,
                e.eta_det()?,
                budget.classical(),
                m.n_th(),
                m.gamma_m,
                m.x_zpf(),
            )?
            .value(),
            "quanta",
        )
        .add("feedback_floor_fitted_imprecision", fitted.value(), "quanta");
    Ok(s)
}

pub fn imprecision_section(e: &Experiment) -> Result<Section> {
    let b = e.imprecision()?;
    let q = Quanta::for_mode(&e.mode);
    let fit = q.quanta_to_imprecision(e.noise.n_imp_fit);
    let mut s = Section::new();
    s.add("s_xx_quantum", b.s_xx_quantum, "m^2/Hz")
        .add("sqrt_s_xx_quantum", b.s_xx_quantum.sqrt(), "m/sqrt(Hz)")
        .add("s_xx_laser_frequency", b.s_xx_laser_freq, "m^2/Hz")
        .add("s_xx_mirror", b.s_xx_mirror, "m^2/Hz")
        .add("s_xx_total", b.total(), "m^2/Hz")
        .add("frequency_pull", b.freq_pull, "rad/s/m")
        .add("laser_figure", b.laser_figure, "")
        .add("mirror_figure", b.mirror_figure, "")
        .add("n_imp_quantum", q.imprecision_to_quanta(b.s_xx_quantum), "quanta")
        .add("n_imp_fitted", e.noise.n_imp_fit, "quanta")
        .add("s_xx_fitted", fit, "m^2/Hz")
        .add("sqrt_s_xx_fitted", fit.sqrt(), "m/sqrt(Hz)");
    Ok(s)
}

pub fn loop_section(e: &Experiment) -> Result<Section> {
    let model = e.loop_model()?;
    let mode = model.mode;
    let g_opt = optimal_gain(&mode, model.s_ff_tot, model.s_xx_imp)?;
    let n_tot_loop = Quanta::for_mode(&mode).force_to_quanta(model.s_ff_tot);
    let cold = cold_damping_occupancy(n_tot_loop, g_opt, &mode, model.s_xx_imp)?.value();
    let (g_min, n_min) = minimize_over_gain(&model, g_opt, e.filter.gain_max)?;
    let mut s = Section::new();
    s.hz("omega_loop", mode.omega_m)
        .hz("gamma_loop", mode.gamma_m)
        .add("filter_phase", model.filter.phase_offset, "rad")
        .add("calibration", model.calibration, "N/m")
        .add("s_ff_total", model.s_ff_tot, "N^2/Hz")
        .add("s_xx_imprecision", model.s_xx_imp, "m^2/Hz")
        .add("optimal_gain_cold_damping", g_opt, "")
        .add("min_occupancy_cold_damping", cold, "quanta")
        .add("optimal_gain", g_min, "")
        .add("min_occupancy", n_min, "quanta")
        .hz("gamma_effective_at_optimum", model.with_gain(g_min).effective_damping());
    if let Some(t) = instability_threshold(&model) {
        s.add("instability_gain", t, "");
    }
    Ok(s)
}

pub fn tin_section(e: &Experiment) -> Result<Section> {
    let b = tin_budget(e.coupling.g0, e.cavity.kappa, e.mode.n_th())?;
    let mut s = Section::new();
    s.add("first_order_scaling", b.first_order_scaling, "")
        .add("second_order_scaling", b.second_order_scaling, "")
        .add("rms_detuning", b.rms_detuning, "kappa");
    Ok(s)
}

/// Every budget section in one report.
pub fn full_report(e: &Experiment, report: &mut Report) -> Result<()> {
    report
        .section("derived", derived_section(e)?)
        .section("backaction", backaction_section(e)?)
        .section("limits", limits_section(e)?)
        .section("imprecision", imprecision_section(e)?)
        .section("loop", loop_section(e)?)
        .section("tin", tin_section(e)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn paper_budget_headlines() {
        let e = Config::paper().experiment().unwrap();
        let l = limits_section(&e).unwrap();
        let n = l.value("sideband_min_at_half_kappa").unwrap();
        assert!((n - 65.0).abs() < 2.0, "{n}");
        let a = l.value("anchor_occupancy").unwrap();
        assert!((a / 1070.0 - 1.0).abs() < 0.1, "{a}");
        let f = l.value("feedback_floor_quantum").unwrap();
        assert!((f - 15.0).abs() < 1.0, "{f}");
        let lp = loop_section(&e).unwrap();
        let m = lp.value("min_occupancy").unwrap();
        assert!((m / 30.0 - 1.0).abs() < 0.2, "{m}");
        assert!(m < lp.value("min_occupancy_cold_damping").unwrap() * 1.5);
    }

    #[test]
    fn sim_scenario_matches_desk_defaults() {
        let e = Config::paper().experiment().unwrap();
        let a = e.sim_config().unwrap();
        let b = SimConfig::desk(20.0, 1).unwrap();
        assert!((a.dt / b.dt - 1.0).abs() < 1e-12);
        assert!((a.s_ff_tot / b.s_ff_tot - 1.0).abs() < 1e-9);
        assert!((a.s_xx_imp / b.s_xx_imp - 1.0).abs() < 1e-9);
        assert!((a.calibration / b.calibration - 1.0).abs() < 1e-9);
        assert!((a.settle / b.settle - 1.0).abs() < 1e-9);
    }
}
