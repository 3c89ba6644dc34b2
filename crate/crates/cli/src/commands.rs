//! Subcommands of the `mimcool` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mimcool_core::backaction::{fit_damping_offset, fit_spring_vs_power, DampingPoint, SpringPoint};
use mimcool_core::constants::TWO_PI;
use mimcool_core::feedback::{closed_loop_displacement_psd, gain_sweep, inloop_psd};
use mimcool_core::limits::Quanta;
use mimcool_core::spectral_fit::{
    calibrate_anchor, fit_closed_loop, fit_inverse_area, fit_lorentzian, fit_q_vs_pressure, fit_reflection_dip,
    fit_susceptibility, frequency_noise_calibration, reflection_dip, tone_area, AreaPoint, ClosedLoopFixed,
    ClosedLoopGuess, GasMaterial, HeatingModelKind, ReflectionModel,
};
use mimcool_core::spectrum::{MetersSq, Normalized, VoltsSq};
use mimcool_core::tin::{cubic_correlation_spectrum, gaussian_cube_spectrum, phase_expansion, spectrum_variance};
use mimcool_core::{FitResult, FrequencyGrid, Spectrum};
use mimcool_sim::{occupancy_vs_gain_sweep, simulate_spectra, SimError};
use thiserror::Error;

use crate::analysis;
use crate::config::{Config, ConfigError, Experiment};
use crate::csvio::{CsvError, Table};
use crate::report::{Report, Section};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Model(#[from] mimcool_core::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    /// 2 for bad input, 3 for numerical failures (instability,
    /// non-convergence, rank deficiency, divergence).
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            CliError::Model(e) => e.is_numerical(),
            CliError::Sim(SimError::Model(e)) => e.is_numerical(),
            CliError::Sim(SimError::Diverged { .. }) => true,
            _ => false,
        };
        if numerical {
            EXIT_NUMERICAL
        } else {
            EXIT_VALIDATION
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Parser)]
#[command(
    name = "mimcool",
    version,
    about = "Cooling budgets, fits and loop simulations for membrane-in-the-middle optomechanics"
)]
pub struct Cli {
    /// Report format on standard output.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArg {
    /// Experiment configuration; the bundled paper configuration when omitted.
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ConfigFlag {
    /// Experiment configuration; the bundled paper configuration when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full budget: derived quantities, backaction, limits, imprecision, loop floor, TIN.
    Report(ConfigArg),
    /// Sideband, anchor and feedback cooling limits.
    Limits(ConfigArg),
    /// Closed-loop model at one gain; optionally writes its spectra.
    Loop {
        #[command(flatten)]
        config: ConfigArg,
        /// Loop gain; the occupancy-minimizing gain when omitted.
        #[arg(long, allow_negative_numbers = true)]
        gain: Option<f64>,
        /// CSV of the out-of-loop and in-loop displacement spectra.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Occupancy against loop gain, from the model or from simulations.
    SweepGain {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated gains; a logarithmic grid when omitted.
        #[arg(long, value_delimiter = ',')]
        gains: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        min_gain: f64,
        #[arg(long, default_value_t = 1000.0)]
        max_gain: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
        /// Run the desk-scale time-domain simulation at every gain.
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time-domain simulation of the desk-scale loop with Welch spectra.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        gain: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Recorded duration, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Welch segment length in samples.
        #[arg(long, default_value_t = 8192)]
        segment: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Lorentzian (or squared-susceptibility) fit of a PSD.
    FitLorentzian {
        spectrum: PathBuf,
        #[arg(long)]
        susceptibility: bool,
    },
    /// Voltage-to-displacement calibration from a sideband-cooled anchor spectrum.
    Calibrate {
        /// Anchor spectrum, V^2/Hz.
        spectrum: PathBuf,
        #[command(flatten)]
        config: ConfigFlag,
        /// Anchor occupancy; computed from the configuration when omitted.
        #[arg(long)]
        occupancy: Option<f64>,
        /// Calibrated, background-subtracted displacement spectrum.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit of an in-loop displacement spectrum for gain, phase and imprecision.
    FitLoop {
        /// In-loop spectrum, m^2/Hz.
        spectrum: PathBuf,
        #[command(flatten)]
        config: ConfigFlag,
        #[arg(long, default_value_t = 10.0)]
        gain_guess: f64,
        /// Phase guess, rad; the configured or tuned phase when omitted.
        #[arg(long)]
        phase_guess: Option<f64>,
        #[arg(long, default_value_t = 1e-4)]
        n_imp_guess: f64,
    },
    /// Reflection-dip fit of a cavity scan (detuning in Hz, normalized reflection).
    FitDip {
        scan: PathBuf,
        /// Off-resonance reflection level.
        #[arg(long)]
        eta_r: f64,
    },
    /// Gas-damping fit of Q against pressure (Pa).
    FitQp {
        data: PathBuf,
        #[command(flatten)]
        config: ConfigFlag,
        /// Pressure of the reference measurement, Pa.
        #[arg(long, default_value_t = 2e-5)]
        from_pressure: f64,
        /// Pressure of the target setup, Pa.
        #[arg(long, default_value_t = 2e-6)]
        to_pressure: f64,
    },
    /// Inverse-area fit against cooling power (W), testing for classical heating.
    FitHeating {
        data: PathBuf,
        /// Reference area A0.
        #[arg(long)]
        area0: f64,
        /// Reference linewidth Γ0, Hz.
        #[arg(long)]
        gamma0: f64,
        #[arg(long, value_enum, default_value_t = HeatingKind::DbaHeating)]
        kind: HeatingKind,
    },
    /// Frequency-noise calibration of a voltage spectrum with a phase-modulation tone.
    CalFreqnoise {
        /// Locked voltage spectrum, V^2/Hz.
        spectrum: PathBuf,
        #[command(flatten)]
        config: ConfigFlag,
        /// Locked to unlocked tone power ratio.
        #[arg(long)]
        ratio: f64,
        /// Modulation depth, rad.
        #[arg(long)]
        phi_mod: f64,
        /// Modulation frequency, Hz.
        #[arg(long)]
        mod_freq: f64,
        /// Half width of the tone window, Hz.
        #[arg(long, default_value_t = 50.0)]
        tone_half_width: f64,
        /// Use the larger root Λ instead of the conservative one.
        #[arg(long)]
        large_root: bool,
        /// Calibrated displacement-noise spectrum.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Thermal intermodulation budget; optionally the mixing spectra of a detuning PSD.
    Tin {
        #[command(flatten)]
        config: ConfigArg,
        /// Normalized detuning spectrum, 1/Hz.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// Mean normalized detuning of the readout.
        #[arg(long, default_value_t = 0.0)]
        upsilon0: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Optical spring and damping; optionally fits measured series.
    Backaction {
        #[command(flatten)]
        config: ConfigArg,
        /// Spring shift (Hz) against input power (W).
        #[arg(long)]
        spring: Option<PathBuf>,
        /// Total linewidth (Hz) against cooling coupling g (Hz).
        #[arg(long)]
        damping: Option<PathBuf>,
        /// Share of the input power reaching the cavity mode.
        #[arg(long, default_value_t = 1.0)]
        coupled_fraction: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeatingKind {
    DbaOnly,
    DbaHeating,
}

fn load(path: &Option<PathBuf>) -> CliResult<(Config, Experiment)> {
    let cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::paper(),
    };
    let e = cfg.experiment()?;
    Ok((cfg, e))
}

fn read_spectrum<U: mimcool_core::spectrum::PsdUnit>(path: &Path) -> CliResult<Spectrum<U>> {
    let t = Table::read(path)?;
    Ok(t.to_spectrum()?.into_typed::<U>()?)
}

fn write_table(t: &Table, path: &Option<PathBuf>, report: &mut Report) -> CliResult<()> {
    if let Some(p) = path {
        t.write(p)?;
        report.note(format!("wrote {} rows to {}", t.rows.len(), p.display()));
    }
    Ok(())
}

fn fit_units(fit: &FitResult, units: &[(&str, &str)]) -> Section {
    Section::from_fit(fit, units)
}

/// Runs a command and returns its report.
pub fn run(cmd: &Command) -> CliResult<Report> {
    match cmd {
        Command::Report(a) => {
            let (cfg, e) = load(&a.config)?;
            let mut r = Report::new("report").with_inputs(&cfg);
            analysis::full_report(&e, &mut r)?;
            Ok(r)
        }
        Command::Limits(a) => {
            let (cfg, e) = load(&a.config)?;
            let mut r = Report::new("limits").with_inputs(&cfg);
            r.section("limits", analysis::limits_section(&e)?);
            Ok(r)
        }
        Command::Loop { config, gain, output } => loop_cmd(config, *gain, output),
        Command::SweepGain { config, gains, min_gain, max_gain, points, simulate, output } => {
            sweep_cmd(config, gains, *min_gain, *max_gain, *points, *simulate, output)
        }
        Command::Simulate { config, gain, seed, duration, segment, output } => {
            simulate_cmd(config, *gain, *seed, *duration, *segment, output)
        }
        Command::FitLorentzian { spectrum, susceptibility } => {
            let t = Table::read(spectrum)?;
            let unit = t.units.get(1).cloned().unwrap_or_default();
            let any = t.to_spectrum()?;
            let fit = match (any, susceptibility) {
                (mimcool_core::spectrum::AnySpectrum::Volts(s), false) => fit_lorentzian(&s)?,
                (mimcool_core::spectrum::AnySpectrum::Volts(s), true) => fit_susceptibility(&s)?,
                (other, sus) => {
                    let s: Spectrum<MetersSq> = Spectrum::new(other.freqs().to_vec(), other.values().to_vec())?;
                    if *sus {
                        fit_susceptibility(&s)?
                    } else {
                        fit_lorentzian(&s)?
                    }
                }
            };
            let area_unit = unit.trim_end_matches("/Hz").to_string();
            let mut r = Report::new("fit-lorentzian");
            r.section(
                "fit",
                fit_units(&fit, &[("center", "Hz"), ("fwhm", "Hz"), ("area", &area_unit), ("floor", &unit)]),
            );
            Ok(r)
        }
        Command::Calibrate { spectrum, config, occupancy, output } => {
            let (cfg, e) = load(&config.config)?;
            let v: Spectrum<VoltsSq> = read_spectrum(spectrum)?;
            let n = match occupancy {
                Some(n) => *n,
                None => e.anchor_occupancy()?,
            };
            let mode = e.loop_mode()?;
            let cal = calibrate_anchor(&v, n, &mode)?;
            let x = cal.to_displacement_subtracted(&v)?;
            let n_back = mimcool_core::feedback::occupancy_from_psd(&x, mode.x_zpf())?;
            let mut s = Section::new();
            s.add("k", cal.k, "m^2/V^2")
                .add("anchor_occupancy", cal.anchor_occupancy, "quanta")
                .add("floor", cal.floor, "V^2/Hz")
                .add("reconstructed_occupancy", n_back, "quanta");
            let mut r = Report::new("calibrate").with_inputs(&cfg);
            r.section("calibration", s);
            write_table(&Table::from_spectrum(&x), output, &mut r)?;
            Ok(r)
        }
        Command::FitLoop { spectrum, config, gain_guess, phase_guess, n_imp_guess } => {
            let (cfg, e) = load(&config.config)?;
            let s: Spectrum<MetersSq> = read_spectrum(spectrum)?;
            let mode = e.loop_mode()?;
            let filter = e.feedback_filter(mode.omega_m)?;
            let phase = phase_guess.unwrap_or(filter.phase_offset);
            let fixed = ClosedLoopFixed { mode, bare_gamma: e.mode.gamma_m, n_tot: e.bare_force_quanta()?, filter };
            let guess = ClosedLoopGuess { gain: *gain_guess, phase, n_imp: *n_imp_guess };
            let fit = fit_closed_loop(&s, &fixed, guess, e.filter.gain_max)?;
            let mut sec = fit_units(&fit, &[("gain", ""), ("phase", "rad"), ("n_imp", "quanta")]);
            if let Some(n) = fit.value("n_imp") {
                let q = Quanta::for_mode(&e.mode);
                sec.add("sqrt_s_xx_imprecision", q.quanta_to_imprecision(n).sqrt(), "m/sqrt(Hz)");
            }
            let mut r = Report::new("fit-loop").with_inputs(&cfg);
            r.section("fit", sec);
            for f in &fit.flags {
                r.note(format!("fit flag: {f}"));
            }
            Ok(r)
        }
        Command::FitDip { scan, eta_r } => {
            let t = Table::read(scan)?;
            let p = scan.display().to_string();
            t.expect_units(&["Hz", ""], &p)?;
            let det: Vec<f64> = t.column(0).iter().map(|f| f * TWO_PI).collect();
            let refl = t.column(1);
            let fit = fit_reflection_dip(&det, &refl, *eta_r)?;
            let kappa = fit.value("kappa").expect("kappa fitted");
            let model = ReflectionModel {
                eta_r: *eta_r,
                eta_l: fit.value("eta_l").expect("eta_l fitted"),
                asym: fit.value("asym").expect("asym fitted"),
                kappa,
            };
            let curve = reflection_dip(&model, &det)?;
            let mut sec = Section::new();
            sec.add_with_stderr("kappa", kappa / TWO_PI, fit.stderr("kappa").map(|s| s / TWO_PI), "Hz")
                .add("eta_l", model.eta_l, "")
                .add("asym", model.asym, "")
                .add("dispersive_area", curve.dispersive_area(), "rad/s")
                .add("dip_area", curve.dip_area(), "rad/s")
                .add("residual_norm", fit.residual_norm, "");
            let mut r = Report::new("fit-dip");
            r.section("fit", sec);
            Ok(r)
        }
        Command::FitQp { data, config, from_pressure, to_pressure } => {
            let (cfg, e) = load(&config.config)?;
            let t = Table::read(data)?;
            t.expect_units(&["Pa", ""], &data.display().to_string())?;
            let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r[0], r[1])).collect();
            let material = GasMaterial::silicon_nitride_in_air(e.thickness);
            let (model, fit) = fit_q_vs_pressure(&pts, material, e.mode.omega_m)?;
            let mut sec = fit_units(&fit, &[("q0", ""), ("a_q", "")]);
            sec.add("q_at_from_pressure", model.q(*from_pressure), "")
                .add("q_at_to_pressure", model.q(*to_pressure), "")
                .add("q_increase", model.q(*to_pressure) / model.q(*from_pressure) - 1.0, "");
            let mut r = Report::new("fit-qp").with_inputs(&cfg);
            r.section("fit", sec);
            Ok(r)
        }
        Command::FitHeating { data, area0, gamma0, kind } => {
            let t = Table::read(data)?;
            t.expect_units(&["W", ""], &data.display().to_string())?;
            let pts: Vec<AreaPoint> =
                t.rows.iter().map(|r| AreaPoint { power: r[0], area: r[1], stderr: r.get(2).copied() }).collect();
            let kind = match kind {
                HeatingKind::DbaOnly => HeatingModelKind::DbaOnly,
                HeatingKind::DbaHeating => HeatingModelKind::DbaHeating,
            };
            let (_, fit) = fit_inverse_area(&pts, *area0, *gamma0 * TWO_PI, kind)?;
            let mut r = Report::new("fit-heating");
            r.section("fit", fit_units(&fit, &[("a_dba", "rad/s/W"), ("a_eh", "1/W")]));
            if let (Some(v), Some(s)) = (fit.value("a_eh"), fit.stderr("a_eh")) {
                let mut sec = Section::new();
                sec.add("a_eh_significance", v / s, "sigma");
                r.section("heating", sec);
            }
            Ok(r)
        }
        Command::CalFreqnoise { spectrum, config, ratio, phi_mod, mod_freq, tone_half_width, large_root, output } => {
            let (cfg, e) = load(&config.config)?;
            let v: Spectrum<VoltsSq> = read_spectrum(spectrum)?;
            let cal = frequency_noise_calibration(*ratio, *phi_mod, mod_freq * TWO_PI, e.cavity.kappa)?;
            let area = tone_area(&v, *mod_freq, *tone_half_width)?;
            let lambda = if *large_root { cal.lambda_roots[1] } else { cal.conservative_lambda() };
            let x = cal.calibrate(&v, area, lambda, e.coupling.g0, e.mode.x_zpf())?;
            let mut sec = Section::new();
            sec.add("lambda_small", cal.lambda_roots[0], "")
                .add("lambda_large", cal.lambda_roots[1], "")
                .add("lambda_used", lambda, "")
                .add("tone_area", area, "V^2")
                .add("volts_per_phase", cal.volts_per_phase(area)?, "V^2/rad^2");
            let mut r = Report::new("cal-freqnoise").with_inputs(&cfg);
            r.section("calibration", sec);
            write_table(&Table::from_spectrum(&x), output, &mut r)?;
            Ok(r)
        }
        Command::Tin { config, spectrum, upsilon0, output } => {
            let (cfg, e) = load(&config.config)?;
            let mut r = Report::new("tin").with_inputs(&cfg);
            r.section("budget", analysis::tin_section(&e)?);
            let ex = phase_expansion(*upsilon0);
            let mut sec = Section::new();
            for (i, c) in ex.coeffs.iter().enumerate() {
                sec.add(&format!("c{i}"), *c, "");
            }
            r.section("expansion", sec);
            if let Some(p) = spectrum {
                let s: Spectrum<Normalized> = read_spectrum(p)?;
                let var = spectrum_variance(&s);
                let cubic = cubic_correlation_spectrum(&s, var)?;
                let cube = gaussian_cube_spectrum(&s)?;
                let mut sec = Section::new();
                sec.add("variance", var, "").add("cube_power", cube.integrate(), "").add(
                    "expected_cube_power",
                    15.0 * var.powi(3),
                    "",
                );
                if let Some(l) = cube.metadata.get("edge_leakage").and_then(|v| v.parse::<f64>().ok()) {
                    sec.add("edge_leakage", l, "");
                }
                r.section("mixing", sec);
                let mut t = Table::new(&["freq", "cubic_correlation", "cube"], &["Hz", "1/Hz", "1/Hz"]);
                for (i, f) in cube.freqs().iter().enumerate() {
                    let c = interpolate(cubic.freqs(), cubic.values(), *f);
                    t.push(vec![*f, c, cube.values()[i]]);
                }
                write_table(&t, output, &mut r)?;
            }
            Ok(r)
        }
        Command::Backaction { config, spring, damping, coupled_fraction } => {
            let (cfg, e) = load(&config.config)?;
            let mut r = Report::new("backaction").with_inputs(&cfg);
            r.section("backaction", analysis::backaction_section(&e)?);
            if let Some(p) = spring {
                let t = Table::read(p)?;
                t.expect_units(&["W", "Hz"], &p.display().to_string())?;
                let pts: Vec<SpringPoint> = t
                    .rows
                    .iter()
                    .map(|r| SpringPoint {
                        power: r[0],
                        delta_omega: r[1] * TWO_PI,
                        stderr: r.get(2).map(|s| s * TWO_PI),
                    })
                    .collect();
                let fit = fit_spring_vs_power(&pts, e.cooling.detuning, &e.cavity, e.mode.omega_m, *coupled_fraction)?;
                let mut sec = Section::new();
                sec.add("slope", fit.slope, "rad^2/s^2/W").hz("offset", fit.offset).hz("g0_estimate", fit.g0_estimate);
                r.section("spring_fit", sec);
            }
            if let Some(p) = damping {
                let t = Table::read(p)?;
                t.expect_units(&["Hz", "Hz"], &p.display().to_string())?;
                let pts: Vec<DampingPoint> = t
                    .rows
                    .iter()
                    .map(|r| DampingPoint {
                        g: r[0] * TWO_PI,
                        gamma_tot: r[1] * TWO_PI,
                        stderr: r.get(2).map(|s| s * TWO_PI),
                    })
                    .collect();
                let fit = fit_damping_offset(&pts, e.mode.gamma_m, e.cooling.detuning, e.cavity.kappa, e.mode.omega_m)?;
                let mut sec = Section::new();
                sec.hz("probe_offset", fit.gamma_probe_offset);
                if let Some(s) = fit.fit.params.first().and_then(|p| p.stderr) {
                    sec.hz("probe_offset_stderr", s);
                }
                r.section("damping_fit", sec);
            }
            Ok(r)
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&v| v >= x) {
        None => 0.0,
        Some(0) => {
            if xs[0] == x {
                ys[0]
            } else {
                0.0
            }
        }
        Some(i) => {
            let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        }
    }
}

fn check_gain(g: f64, gain_max: f64) -> CliResult<()> {
    if g.is_finite() && g <= gain_max {
        Ok(())
    } else {
        Err(CliError::Usage(format!("gain {g} exceeds filter.gain_max = {gain_max}")))
    }
}

fn loop_cmd(config: &ConfigArg, gain: Option<f64>, output: &Option<PathBuf>) -> CliResult<Report> {
    let (cfg, e) = load(&config.config)?;
    let model = e.loop_model()?;
    let mut r = Report::new("loop").with_inputs(&cfg);
    let sec = analysis::loop_section(&e)?;
    let g = gain.unwrap_or_else(|| sec.value("optimal_gain").expect("loop section has the optimum"));
    check_gain(g, e.filter.gain_max)?;
    r.section("loop", sec);
    let m = model.with_gain(g);
    if !m.is_stable() {
        return Err(mimcool_core::Error::Unstable(format!("loop is unstable at gain {g}")).into());
    }
    let mut at = Section::new();
    at.add("gain", g, "").add("occupancy", m.occupancy()?, "quanta").hz("effective_damping", m.effective_damping());
    r.section("at_gain", at);
    if output.is_some() {
        let grid = m.auto_grid(40.0, 25.0)?;
        let x = closed_loop_displacement_psd(&m, &grid)?;
        let y = inloop_psd(&m, &grid)?;
        let mut t = Table::new(&["freq", "s_xx", "s_yy"], &["Hz", "m^2/Hz", "m^2/Hz"]).meta("gain", format!("{g:e}"));
        for i in 0..x.len() {
            t.push(vec![x.freqs()[i], x.values()[i], y.values()[i]]);
        }
        write_table(&t, output, &mut r)?;
    }
    Ok(r)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn sweep_cmd(
    config: &ConfigArg,
    gains: &[f64],
    min_gain: f64,
    max_gain: f64,
    points: usize,
    simulate: bool,
    output: &Option<PathBuf>,
) -> CliResult<Report> {
    let (cfg, e) = load(&config.config)?;
    if !gains.is_empty() && gains.iter().any(|g| !(*g >= 0.0)) {
        return Err(CliError::Usage("gains must be non-negative".into()));
    }
    if gains.is_empty() && !(min_gain > 0.0 && max_gain > min_gain && points >= 2) {
        return Err(CliError::Usage("need 0 < min-gain < max-gain and at least two points".into()));
    }
    let gains = if gains.is_empty() { log_grid(min_gain, max_gain, points) } else { gains.to_vec() };
    for &g in &gains {
        check_gain(g, e.filter.gain_max)?;
    }
    let mut r = Report::new("sweep-gain").with_inputs(&cfg);
    let (table, rows): (Table, Vec<(f64, f64)>) = if simulate {
        let sc = e.sim_config()?;
        let pts = occupancy_vs_gain_sweep(&sc, &gains)?;
        let mut t = Table::new(&["gain", "n_sim", "n_model"], &["", "quanta", "quanta"]).meta("scenario", "desk");
        for p in &pts {
            t.push(vec![p.gain, p.n_sim, p.n_model]);
        }
        (t, pts.iter().map(|p| (p.gain, p.n_sim)).collect())
    } else {
        let model = e.loop_model()?;
        let pts = gain_sweep(&model, &gains)?;
        let mut t = Table::new(&["gain", "n_model", "stable"], &["", "quanta", ""]).meta("scenario", "paper");
        for p in &pts {
            t.push(vec![p.gain, p.n_bar, if p.stable { 1.0 } else { 0.0 }]);
        }
        (t, pts.iter().filter(|p| p.stable).map(|p| (p.gain, p.n_bar)).collect())
    };
    let mut sec = Section::new();
    if let Some((g, n)) = rows.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)) {
        sec.add("min_gain", g, "").add("min_occupancy", n, "quanta");
    }
    sec.add("points", table.rows.len() as f64, "");
    r.section("sweep", sec);
    write_table(&table, output, &mut r)?;
    Ok(r)
}

fn simulate_cmd(
    config: &ConfigArg,
    gain: Option<f64>,
    seed: Option<u64>,
    duration: Option<f64>,
    segment: usize,
    output: &Option<PathBuf>,
) -> CliResult<Report> {
    let (cfg, e) = load(&config.config)?;
    let mut sc = e.sim_config()?;
    if let Some(g) = gain {
        check_gain(g, e.filter.gain_max)?;
        sc = sc.with_gain(g).with_settling(e.simulation.settle);
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(d) = duration {
        sc.duration = d;
    }
    let spectra = simulate_spectra(&sc, segment, 0.5)?;
    let model = sc.discrete_model()?;
    let x2 = sc.mode.x_zpf().powi(2);
    let mut sec = Section::new();
    sec.add("gain", sc.filter.gain, "")
        .add("seed", sc.seed as f64, "")
        .add("dt", sc.dt, "s")
        .add("samples", spectra.samples as f64, "")
        .add("variance_x", spectra.variance_x, "m^2")
        .add("occupancy_from_variance", spectra.variance_x / (2.0 * x2) - 0.5, "quanta")
        .add("occupancy_from_psd", spectra.x.integrate() / (2.0 * x2) - 0.5, "quanta")
        .add("occupancy_model", model.occupancy()?, "quanta");
    let mut r = Report::new("simulate").with_inputs(&cfg);
    r.section("simulation", sec);
    let mut t = Table::new(
        &["freq", "s_xx", "s_yy", "s_xx_model", "s_yy_model"],
        &["Hz", "m^2/Hz", "m^2/Hz", "m^2/Hz", "m^2/Hz"],
    )
    .meta("segments", spectra.x.metadata.get("segments").cloned().unwrap_or_default());
    let grid = FrequencyGrid::new(spectra.x.freqs()[0], spectra.x.df(), spectra.x.len())?;
    for i in 0..grid.len {
        let w = grid.omega(i);
        t.push(vec![grid.freq(i), spectra.x.values()[i], spectra.y.values()[i], model.s_xx(w), model.s_yy(w)]);
    }
    write_table(&t, output, &mut r)?;
    Ok(r)
}

/// Parses arguments, runs the command and prints the report. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match run(&cli.command) {
        Ok(report) => {
            let text = match cli.format {
                Format::Json => report.to_json() + "\n",
                Format::Text => report.to_text(),
            };
            match out.write_all(text.as_bytes()) {
                Ok(()) => 0,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_VALIDATION
                }
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
