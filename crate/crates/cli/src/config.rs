//! Sectioned `key = value unit` configuration files.
//!
//! A [`Config`] is the raw, unit-normalized table of values together with
//! where each value came from. [`Experiment`] is the typed view built from
//! it, validated against the model invariants.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use mimcool_core::feedback::AuxStage;
use mimcool_core::params::{DetectionChain, FiberLossConvention};
use mimcool_core::{BeamRole, CouplingConfig, MechanicalMode, OpticalBeam, OpticalCavity};
use thiserror::Error;

use crate::units::{format_value, parse_value, Dim, Value};

/// The bundled configuration describing the published experiment.
pub const PAPER_CFG: &str = include_str!("../paper.cfg");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("[{section}] missing required key `{key}`")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("[{section}] {msg}")]
    Invalid { section: &'static str, msg: String },
    #[error("cannot read {path}: {msg}")]
    Read { path: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Need {
    Required,
    Optional,
    Default(&'static str),
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub dim: Dim,
    pub need: Need,
}

const fn k(section: &'static str, key: &'static str, dim: Dim, need: Need) -> KeySpec {
    KeySpec { section, key, dim, need }
}

use Need::{Default as D, Optional as O, Required as R};

/// Sections and whether they must appear in a file.
pub const SECTIONS: &[(&str, bool)] = &[
    ("mechanical", true),
    ("cavity", true),
    ("coupling", true),
    ("cooling", true),
    ("probe", true),
    ("detection", true),
    ("noise", false),
    ("anchor", true),
    ("filter", true),
    ("simulation", false),
];

pub const SCHEMA: &[KeySpec] = &[
    k("mechanical", "omega_m", Dim::Frequency, R),
    k("mechanical", "gamma_m", Dim::Frequency, R),
    k("mechanical", "m_eff", Dim::Mass, R),
    k("mechanical", "temperature", Dim::Temperature, R),
    k("mechanical", "thickness", Dim::Length, D("15 nm")),
    k("cavity", "kappa", Dim::Frequency, R),
    k("cavity", "length", Dim::Length, R),
    k("cavity", "wavelength", Dim::Length, R),
    k("cavity", "eta_c", Dim::Ratio, R),
    k("cavity", "t_f", Dim::Ratio, O),
    k("cavity", "t_e", Dim::Ratio, O),
    k("cavity", "finesse", Dim::Ratio, O),
    k("coupling", "g0", Dim::Frequency, R),
    k("coupling", "membrane_reflectivity", Dim::Ratio, D("0.35")),
    k("coupling", "overlap", Dim::Ratio, D("0.4")),
    k("cooling", "power", Dim::Power, R),
    k("cooling", "detuning", Dim::Frequency, R),
    k("cooling", "g", Dim::Frequency, O),
    k("probe", "detuning", Dim::Frequency, R),
    k("probe", "cooperativity", Dim::Ratio, R),
    k("probe", "power", Dim::Power, D("0 W")),
    k("detection", "mode_matching", Dim::Ratio, R),
    k("detection", "overcoupling", Dim::Ratio, R),
    k("detection", "fiber_loss", Dim::Ratio, R),
    k("detection", "visibility", Dim::Ratio, R),
    k("detection", "quantum_efficiency", Dim::Ratio, R),
    k("detection", "convention", Dim::Text, D("power")),
    k("detection", "eta_det", Dim::Ratio, O),
    k("noise", "s_freq", Dim::FrequencyNoise, D("1 Hz^2/Hz")),
    k("noise", "s_mirror", Dim::DisplacementNoise, D("1e-34 m^2/Hz")),
    k("noise", "n_imp_fit", Dim::Ratio, D("3.2e-5")),
    k("anchor", "gamma_tot", Dim::Frequency, R),
    k("anchor", "probe_damping", Dim::Frequency, R),
    k("filter", "center", Dim::Frequency, R),
    k("filter", "bandwidth", Dim::Frequency, R),
    k("filter", "delay", Dim::Time, R),
    k("filter", "phase", Dim::Angle, O),
    k("filter", "gain_max", Dim::Ratio, D("1000")),
    k("filter", "aux_center", Dim::Frequency, O),
    k("filter", "aux_bandwidth", Dim::Frequency, O),
    k("filter", "aux_gain", Dim::Ratio, O),
    k("filter", "aux_phase", Dim::Angle, O),
    k("filter", "aux_order", Dim::Count, O),
    k("simulation", "n_th", Dim::Ratio, D("1e4")),
    k("simulation", "gamma", Dim::Frequency, D("1 kHz")),
    k("simulation", "n_imp", Dim::Ratio, D("25")),
    k("simulation", "bandwidth", Dim::Frequency, D("600 kHz")),
    k("simulation", "delay", Dim::Time, D("100 ns")),
    k("simulation", "samples_per_period", Dim::Count, D("32")),
    k("simulation", "duration", Dim::Time, D("0.1 s")),
    k("simulation", "settle", Dim::Ratio, D("20")),
    k("simulation", "gain", Dim::Ratio, D("20")),
    k("simulation", "seed", Dim::Count, D("1")),
];

pub fn key_spec(section: &str, key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.section == section && s.key == key)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    User,
    Default,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub origin: Origin,
}

/// Unit-normalized values keyed by section and key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn syntax(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, msg: msg.into() }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn paper() -> Self {
        Self::parse(PAPER_CFG).expect("bundled configuration is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut section: Option<&'static str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| syntax(line, "unterminated section header"))?.trim();
                let known = SECTIONS
                    .iter()
                    .find(|(s, _)| *s == name)
                    .ok_or_else(|| syntax(line, format!("unknown section [{name}]")))?;
                if cfg.entries.contains_key(known.0) {
                    return Err(syntax(line, format!("section [{name}] appears twice")));
                }
                cfg.entries.insert(known.0.to_string(), BTreeMap::new());
                section = Some(known.0);
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| syntax(line, "expected `key = value`"))?;
            let key = key.trim();
            let sec = section.ok_or_else(|| syntax(line, format!("`{key}` appears before any section")))?;
            let spec = key_spec(sec, key).ok_or_else(|| syntax(line, format!("unknown key `{key}` in [{sec}]")))?;
            let value = parse_value(value, spec.dim).map_err(|e| syntax(line, format!("{key}: {e}")))?;
            let table = cfg.entries.get_mut(sec).expect("section inserted on header");
            if table.contains_key(key) {
                return Err(syntax(line, format!("`{key}` set twice in [{sec}]")));
            }
            table.insert(key.to_string(), Entry { value, origin: Origin::User });
        }
        cfg.complete()?;
        Ok(cfg)
    }

    /// Checks required sections and keys and fills in defaults.
    fn complete(&mut self) -> Result<(), ConfigError> {
        for &(name, required) in SECTIONS {
            if !self.entries.contains_key(name) {
                if required {
                    return Err(ConfigError::MissingSection(name));
                }
                self.entries.insert(name.to_string(), BTreeMap::new());
            }
        }
        for spec in SCHEMA {
            let table = self.entries.get_mut(spec.section).expect("all sections present");
            if table.contains_key(spec.key) {
                continue;
            }
            match spec.need {
                Need::Required => return Err(ConfigError::MissingKey { section: spec.section, key: spec.key }),
                Need::Optional => {}
                Need::Default(text) => {
                    let value = parse_value(text, spec.dim).expect("schema defaults parse");
                    table.insert(spec.key.to_string(), Entry { value, origin: Origin::Default });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(section).and_then(|t| t.get(key))
    }

    /// Replaces a value, parsing `text` with the key's dimension.
    pub fn set(&mut self, section: &str, key: &str, text: &str) -> Result<(), ConfigError> {
        let spec = key_spec(section, key).ok_or_else(|| ConfigError::Invalid {
            section: SECTIONS.iter().find(|(s, _)| *s == section).map_or("?", |s| s.0),
            msg: format!("unknown key `{key}`"),
        })?;
        let value = parse_value(text, spec.dim)
            .map_err(|e| ConfigError::Invalid { section: spec.section, msg: format!("{key}: {e}") })?;
        self.entries
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), Entry { value, origin: Origin::User });
        Ok(())
    }

    fn number(&self, section: &'static str, key: &'static str) -> Result<f64, ConfigError> {
        self.get(section, key).and_then(|e| e.value.number()).ok_or(ConfigError::MissingKey { section, key })
    }

    fn maybe(&self, section: &str, key: &str) -> Option<f64> {
        self.get(section, key).and_then(|e| e.value.number())
    }

    fn text(&self, section: &'static str, key: &'static str) -> Result<&str, ConfigError> {
        match self.get(section, key).map(|e| &e.value) {
            Some(Value::Text(t)) => Ok(t),
            _ => Err(ConfigError::MissingKey { section, key }),
        }
    }

    /// Every value as `section -> key -> "value unit"` in canonical units.
    pub fn canonical(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.entries
            .iter()
            .map(|(s, t)| {
                let vals = t
                    .iter()
                    .map(|(k, e)| {
                        let dim = key_spec(s, k).expect("entries follow the schema").dim;
                        (k.clone(), format_value(&e.value, dim))
                    })
                    .collect();
                (s.clone(), vals)
            })
            .collect()
    }

    /// `section.key` of every value taken from the schema defaults.
    pub fn defaulted(&self) -> Vec<String> {
        self.entries
            .iter()
            .flat_map(|(s, t)| {
                t.iter().filter(|(_, e)| e.origin == Origin::Default).map(move |(k, _)| format!("{s}.{k}"))
            })
            .collect()
    }

    /// Rebuilds a configuration from [`Config::canonical`] and
    /// [`Config::defaulted`], as echoed in a report.
    pub fn from_canonical(
        values: &BTreeMap<String, BTreeMap<String, String>>,
        defaulted: &[String],
    ) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (s, table) in values {
            for (key, text) in table {
                cfg.set(s, key, text)?;
                if defaulted.iter().any(|d| *d == format!("{s}.{key}")) {
                    if let Some(e) = cfg.entries.get_mut(s).and_then(|t| t.get_mut(key)) {
                        e.origin = Origin::Default;
                    }
                }
            }
        }
        cfg.complete()?;
        Ok(cfg)
    }

    /// The experiment described by this configuration.
    pub fn experiment(&self) -> Result<Experiment, ConfigError> {
        Experiment::from_config(self)
    }
}

impl fmt::Display for Config {
    /// Writes user-supplied values in canonical units; defaults are left
    /// implicit so that reading the output back restores the same origins.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let canon = self.canonical();
        for &(name, _) in SECTIONS {
            writeln!(f, "[{name}]")?;
            if let (Some(table), Some(text)) = (self.entries.get(name), canon.get(name)) {
                for (key, e) in table {
                    if e.origin == Origin::User {
                        writeln!(f, "{key} = {}", text[key])?;
                    }
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Readout chain and probe beam settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSettings {
    pub detuning: f64,
    pub cooperativity: f64,
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSettings {
    /// (rad/s)²/Hz
    pub s_omega_omega: f64,
    /// m²/Hz
    pub s_xx_mirror: f64,
    /// Excess imprecision found by closed-loop fits, quanta of the bare mode.
    pub n_imp_fit: f64,
}

/// Measured linewidth of the sideband-cooled anchor spectrum and the
/// probe's share of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorSettings {
    pub gamma_tot: f64,
    pub probe_damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSettings {
    pub center: f64,
    pub bandwidth: f64,
    pub delay: f64,
    /// Fixed phase offset; tuned for pure damping when absent.
    pub phase: Option<f64>,
    pub gain_max: f64,
    pub aux: Option<AuxStage>,
}

/// Desk-scale closed-loop simulation settings. The mode frequency and mass
/// come from the mechanical section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationSettings {
    pub n_th: f64,
    pub gamma: f64,
    pub n_imp: f64,
    pub bandwidth: f64,
    pub delay: f64,
    pub samples_per_period: u64,
    pub duration: f64,
    /// Settling interval in closed-loop amplitude decay times.
    pub settle: f64,
    pub gain: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub mode: MechanicalMode,
    pub thickness: f64,
    pub cavity: OpticalCavity,
    /// Finesse as quoted alongside κ and L, which it need not match.
    pub finesse_quoted: Option<f64>,
    pub coupling: CouplingConfig,
    pub cooling: OpticalBeam,
    /// True when the cooling coupling was given rather than derived from
    /// the input power.
    pub cooling_g_given: bool,
    pub probe: ProbeSettings,
    pub detection: DetectionChain,
    /// Overall efficiency when it is measured directly rather than taken
    /// as the product of the chain.
    pub eta_det_measured: Option<f64>,
    pub noise: NoiseSettings,
    pub anchor: AnchorSettings,
    pub filter: FilterSettings,
    pub simulation: SimulationSettings,
}

fn invalid(section: &'static str) -> impl Fn(mimcool_core::Error) -> ConfigError {
    move |e| ConfigError::Invalid { section, msg: e.to_string() }
}

fn count(cfg: &Config, section: &'static str, key: &'static str) -> Result<u64, ConfigError> {
    match cfg.get(section, key).map(|e| &e.value) {
        Some(Value::Count(n)) => Ok(*n),
        _ => Err(ConfigError::MissingKey { section, key }),
    }
}

impl Experiment {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        let mode = MechanicalMode::new(
            cfg.number("mechanical", "omega_m")?,
            cfg.number("mechanical", "gamma_m")?,
            cfg.number("mechanical", "m_eff")?,
            cfg.number("mechanical", "temperature")?,
        )
        .map_err(invalid("mechanical"))?;
        let thickness = cfg.number("mechanical", "thickness")?;
        if !(thickness > 0.0) {
            return Err(ConfigError::Invalid { section: "mechanical", msg: "thickness must be positive".into() });
        }

        let cavity = OpticalCavity {
            kappa: cfg.number("cavity", "kappa")?,
            length: cfg.number("cavity", "length")?,
            wavelength: cfg.number("cavity", "wavelength")?,
            eta_c: cfg.number("cavity", "eta_c")?,
            t_f: cfg.maybe("cavity", "t_f"),
            t_e: cfg.maybe("cavity", "t_e"),
        };
        cavity.validate().map_err(invalid("cavity"))?;
        let finesse_quoted = cfg.maybe("cavity", "finesse");
        if let Some(f) = finesse_quoted {
            if !(f > 0.0 && f.is_finite()) {
                return Err(ConfigError::Invalid { section: "cavity", msg: format!("finesse = {f} must be positive") });
            }
        }

        let coupling = CouplingConfig {
            g0: cfg.number("coupling", "g0")?,
            membrane_reflectivity: cfg.number("coupling", "membrane_reflectivity")?,
            overlap: cfg.number("coupling", "overlap")?,
        };
        coupling.validate().map_err(invalid("coupling"))?;

        let mut cooling = OpticalBeam {
            power_in: cfg.number("cooling", "power")?,
            detuning: cfg.number("cooling", "detuning")?,
            g: 0.0,
            role: BeamRole::Cooling,
        };
        cooling.validate().map_err(invalid("cooling"))?;
        let given = cfg.maybe("cooling", "g");
        cooling.g = match given {
            Some(g) => g,
            None => {
                let n = mimcool_core::params::intracavity_photons(&cavity, &cooling).map_err(invalid("cooling"))?;
                coupling.g0 * n.sqrt()
            }
        };
        cooling.validate().map_err(invalid("cooling"))?;

        let probe = ProbeSettings {
            detuning: cfg.number("probe", "detuning")?,
            cooperativity: cfg.number("probe", "cooperativity")?,
            power: cfg.number("probe", "power")?,
        };
        if !(probe.cooperativity > 0.0) || !probe.detuning.is_finite() || !(probe.power >= 0.0) {
            return Err(ConfigError::Invalid {
                section: "probe",
                msg: "cooperativity must be positive and power non-negative".into(),
            });
        }

        let convention = match cfg.text("detection", "convention")? {
            "power" => FiberLossConvention::Power,
            "amplitude" => FiberLossConvention::Amplitude,
            other => {
                return Err(ConfigError::Invalid {
                    section: "detection",
                    msg: format!("convention `{other}` is neither `power` nor `amplitude`"),
                })
            }
        };
        let detection = DetectionChain {
            mode_matching: cfg.number("detection", "mode_matching")?,
            overcoupling: cfg.number("detection", "overcoupling")?,
            fiber_loss: cfg.number("detection", "fiber_loss")?,
            visibility: cfg.number("detection", "visibility")?,
            quantum_efficiency: cfg.number("detection", "quantum_efficiency")?,
            convention,
        };
        detection.validate().map_err(invalid("detection"))?;
        let eta_det_measured = cfg.get("detection", "eta_det").and_then(|e| e.value.number());
        if let Some(eta) = eta_det_measured {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(ConfigError::Invalid {
                    section: "detection",
                    msg: format!("eta_det = {eta} is not in (0, 1]"),
                });
            }
        }

        let noise = NoiseSettings {
            s_omega_omega: cfg.number("noise", "s_freq")?,
            s_xx_mirror: cfg.number("noise", "s_mirror")?,
            n_imp_fit: cfg.number("noise", "n_imp_fit")?,
        };
        if !(noise.s_omega_omega >= 0.0) || !(noise.s_xx_mirror >= 0.0) || !(noise.n_imp_fit >= 0.0) {
            return Err(ConfigError::Invalid { section: "noise", msg: "noise levels must be non-negative".into() });
        }

        let anchor = AnchorSettings {
            gamma_tot: cfg.number("anchor", "gamma_tot")?,
            probe_damping: cfg.number("anchor", "probe_damping")?,
        };
        if !(anchor.gamma_tot > mode.gamma_m + anchor.probe_damping) || !(anchor.probe_damping >= 0.0) {
            return Err(ConfigError::Invalid {
                section: "anchor",
                msg: "gamma_tot must exceed gamma_m plus the probe damping".into(),
            });
        }

        let filter = filter_settings(cfg)?;
        let simulation = SimulationSettings {
            n_th: cfg.number("simulation", "n_th")?,
            gamma: cfg.number("simulation", "gamma")?,
            n_imp: cfg.number("simulation", "n_imp")?,
            bandwidth: cfg.number("simulation", "bandwidth")?,
            delay: cfg.number("simulation", "delay")?,
            samples_per_period: count(cfg, "simulation", "samples_per_period")?,
            duration: cfg.number("simulation", "duration")?,
            settle: cfg.number("simulation", "settle")?,
            gain: cfg.number("simulation", "gain")?,
            seed: count(cfg, "simulation", "seed")?,
        };
        let s = &simulation;
        if !(s.n_th > 0.0 && s.gamma > 0.0 && s.n_imp > 0.0 && s.bandwidth > 0.0 && s.duration > 0.0)
            || !(s.delay >= 0.0 && s.settle >= 0.0 && s.gain >= 0.0)
        {
            return Err(ConfigError::Invalid {
                section: "simulation",
                msg: "rates, noise levels and duration must be positive; delay, settle and gain non-negative".into(),
            });
        }

        Ok(Self {
            mode,
            thickness,
            cavity,
            finesse_quoted,
            coupling,
            cooling,
            cooling_g_given: given.is_some(),
            probe,
            detection,
            eta_det_measured,
            noise,
            anchor,
            filter,
            simulation,
        })
    }
}

fn filter_settings(cfg: &Config) -> Result<FilterSettings, ConfigError> {
    let aux_keys = ["aux_center", "aux_bandwidth", "aux_gain", "aux_phase"];
    let present = aux_keys.iter().filter(|k| cfg.get("filter", k).is_some()).count();
    let aux = match present {
        0 => None,
        4 => Some(AuxStage {
            center: cfg.number("filter", "aux_center")?,
            bandwidth: cfg.number("filter", "aux_bandwidth")?,
            gain: cfg.number("filter", "aux_gain")?,
            phase: cfg.number("filter", "aux_phase")?,
            order: cfg.get("filter", "aux_order").map_or(Ok(1), |_| count(cfg, "filter", "aux_order"))? as u32,
        }),
        _ => {
            return Err(ConfigError::Invalid {
                section: "filter",
                msg: "aux_center, aux_bandwidth, aux_gain and aux_phase must be given together".into(),
            })
        }
    };
    let filter = FilterSettings {
        center: cfg.number("filter", "center")?,
        bandwidth: cfg.number("filter", "bandwidth")?,
        delay: cfg.number("filter", "delay")?,
        phase: cfg.maybe("filter", "phase"),
        gain_max: cfg.number("filter", "gain_max")?,
        aux,
    };
    if !(filter.center > 0.0 && filter.bandwidth > 0.0 && filter.delay >= 0.0 && filter.gain_max > 0.0) {
        return Err(ConfigError::Invalid {
            section: "filter",
            msg: "center, bandwidth and gain_max must be positive, delay non-negative".into(),
        });
    }
    if let Some(a) = &filter.aux {
        if !(a.center > 0.0 && a.bandwidth > 0.0) || a.order == 0 {
            return Err(ConfigError::Invalid {
                section: "filter",
                msg: "aux stage needs positive center and bandwidth and order of at least 1".into(),
            });
        }
    }
    Ok(filter)
}
