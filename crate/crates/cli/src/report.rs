//! Machine-readable reports: named sections of quantities with units.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mimcool_core::constants::TWO_PI;
use mimcool_core::FitResult;
use serde::Serialize;

use crate::config::Config;

pub const CONVENTIONS: &str = "Frequencies and rates are reported in Hz (f = ω/2π; linewidths are FWHM) \
and used internally as angular rates. PSDs are single-sided, per Hz. Occupancies are in quanta.";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub unit: String,
}

/// Quantities under their names, kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Section(BTreeMap<String, Quantity>);

impl Section {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: f64, unit: &str) -> &mut Self {
        self.0.insert(name.to_string(), Quantity { value, stderr: None, unit: unit.to_string() });
        self
    }

    pub fn add_with_stderr(&mut self, name: &str, value: f64, stderr: Option<f64>, unit: &str) -> &mut Self {
        self.0.insert(name.to_string(), Quantity { value, stderr, unit: unit.to_string() });
        self
    }

    /// Adds an angular rate, reported in Hz.
    pub fn hz(&mut self, name: &str, omega: f64) -> &mut Self {
        self.add(name, omega / TWO_PI, "Hz")
    }

    pub fn get(&self, name: &str) -> Option<&Quantity> {
        self.0.get(name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.0.get(name).map(|q| q.value)
    }

    /// Fitted parameters with their standard errors and the given units.
    pub fn from_fit(fit: &FitResult, units: &[(&str, &str)]) -> Self {
        let mut s = Self::new();
        for p in &fit.params {
            let unit = units.iter().find(|(n, _)| *n == p.name).map_or("", |(_, u)| u);
            s.0.insert(p.name.clone(), Quantity { value: p.value, stderr: p.stderr, unit: unit.to_string() });
        }
        s.add("residual_norm", fit.residual_norm, "");
        s.add("iterations", fit.iterations as f64, "");
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub conventions: &'static str,
    /// Configuration values in canonical units, when a configuration was used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<BTreeMap<String, BTreeMap<String, String>>>,
    /// `section.key` of configuration values taken from defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defaults: Option<Vec<String>>,
    pub results: BTreeMap<String, Section>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), conventions: CONVENTIONS, ..Self::default() }
    }

    pub fn with_inputs(mut self, cfg: &Config) -> Self {
        self.inputs = Some(cfg.canonical());
        self.defaults = Some(cfg.defaulted());
        self
    }

    pub fn section(&mut self, name: &str, section: Section) -> &mut Self {
        self.results.insert(name.to_string(), section);
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn value(&self, section: &str, name: &str) -> Option<f64> {
        self.results.get(section).and_then(|s| s.value(name))
    }

    /// Pretty JSON with every object's keys sorted.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("JSON value prints")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.command);
        let _ = writeln!(out, "# {}", self.conventions);
        for (sname, sec) in &self.results {
            for (name, q) in &sec.0 {
                let _ = write!(out, "{sname}.{name} = {:.6e}", q.value);
                if let Some(e) = q.stderr {
                    let _ = write!(out, " ± {e:.2e}");
                }
                if !q.unit.is_empty() {
                    let _ = write!(out, " {}", q.unit);
                }
                out.push('\n');
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// Recovers the configuration echoed in a JSON report.
    pub fn config_from_json(json: &str) -> Result<Config, String> {
        #[derive(serde::Deserialize)]
        struct Echo {
            inputs: BTreeMap<String, BTreeMap<String, String>>,
            #[serde(default)]
            defaults: Vec<String>,
        }
        let echo: Echo = serde_json::from_str(json).map_err(|e| e.to_string())?;
        Config::from_canonical(&echo.inputs, &echo.defaults).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_are_sorted() {
        let mut r = Report::new("x");
        let mut s = Section::new();
        s.add("zeta", 1.0, "").hz("alpha", TWO_PI * 5.0);
        r.section("b", s.clone()).section("a", s);
        let j = r.to_json();
        assert!(j.find("\"a\"").unwrap() < j.find("\"b\"").unwrap());
        assert!(j.find("alpha").unwrap() < j.find("zeta").unwrap());
        assert_eq!(r.value("a", "alpha"), Some(5.0));
    }

    #[test]
    fn text_lists_every_quantity() {
        let mut r = Report::new("x");
        let mut s = Section::new();
        s.add("n", 2.0, "quanta");
        r.section("limits", s);
        assert!(r.to_text().contains("limits.n = 2.000000e0 quanta"));
    }
}
