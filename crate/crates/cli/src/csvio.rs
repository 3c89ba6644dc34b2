//! Comma-separated numeric tables with `#` header comments.
//!
//! ```text
//! # units=Hz,m^2/Hz
//! # source=simulate
//! freq,psd
//! 1.0e6,3.2e-30
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mimcool_core::spectrum::{AnySpectrum, PsdUnit};
use mimcool_core::Spectrum;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub units: Vec<String>,
    /// Other `# key=value` header entries.
    pub meta: BTreeMap<String, String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str], units: &[&str]) -> Self {
        assert_eq!(columns.len(), units.len());
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            units: units.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn from_spectrum<U: PsdUnit>(s: &Spectrum<U>) -> Self {
        let mut t = Self::new(&["freq", "psd"], &["Hz", U::TAG]);
        for (k, v) in &s.metadata {
            t.meta.insert(k.clone(), v.clone());
        }
        for (f, v) in s.freqs().iter().zip(s.values()) {
            t.push(vec![*f, *v]);
        }
        t
    }

    /// The first two columns as a spectrum tagged by the second unit.
    pub fn to_spectrum(&self) -> mimcool_core::Result<AnySpectrum> {
        if self.columns.len() < 2 || self.units.first().map(String::as_str) != Some("Hz") {
            return Err(mimcool_core::Error::input("a spectrum needs a Hz frequency column and a PSD column"));
        }
        AnySpectrum::from_tagged(&self.units[1], self.column(0), self.column(1))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# units={}", self.units.join(","));
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, CsvError> {
        let err = |msg: String| CsvError::Format { path: path.to_string(), msg };
        let mut t = Table::default();
        let mut body = String::new();
        for line in text.lines() {
            match line.trim_start().strip_prefix('#') {
                Some(c) => {
                    if let Some((k, v)) = c.trim().split_once('=') {
                        match k.trim() {
                            "units" => t.units = v.split(',').map(|u| u.trim().to_string()).collect(),
                            key => {
                                t.meta.insert(key.to_string(), v.trim().to_string());
                            }
                        }
                    }
                }
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        t.columns = rdr.headers().map_err(|e| err(e.to_string()))?.iter().map(String::from).collect();
        if t.units.is_empty() {
            return Err(err("missing `# units=` header".into()));
        }
        if t.units.len() != t.columns.len() {
            return Err(err(format!("{} units for {} columns", t.units.len(), t.columns.len())));
        }
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let row = rec
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| err(format!("data row {}: `{c}` is not a number", i + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            t.rows.push(row);
        }
        if t.rows.is_empty() {
            return Err(err("no data rows".into()));
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self, CsvError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CsvError::Io { path: p.clone(), source })?;
        Self::parse(&text, &p)
    }

    pub fn write(&self, path: &Path) -> Result<(), CsvError> {
        std::fs::write(path, self.to_csv()).map_err(|source| CsvError::Io { path: path.display().to_string(), source })
    }

    /// Checks the column units, by position.
    pub fn expect_units(&self, want: &[&str], path: &str) -> Result<(), CsvError> {
        let ok = self.units.len() >= want.len() && want.iter().zip(&self.units).all(|(w, u)| w == u);
        if ok {
            Ok(())
        } else {
            Err(CsvError::Format {
                path: path.to_string(),
                msg: format!("expected units {} but found {}", want.join(","), self.units.join(",")),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mimcool_core::spectrum::MetersSq;

    #[test]
    fn round_trip() {
        let mut t = Table::new(&["freq", "psd"], &["Hz", "m^2/Hz"]).meta("source", "test");
        t.push(vec![1.0, 0.1 + 0.2]);
        t.push(vec![2.0, 1e-300]);
        let back = Table::parse(&t.to_csv(), "mem").unwrap();
        assert_eq!(back, t);
        let s: Spectrum<MetersSq> = back.to_spectrum().unwrap().into_typed().unwrap();
        assert_eq!(s.values(), &[0.1 + 0.2, 1e-300]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Table::parse("freq,psd\n1,2\n", "x").is_err());
        assert!(Table::parse("# units=Hz\nfreq,psd\n1,2\n", "x").is_err());
        assert!(Table::parse("# units=Hz,V^2/Hz\nfreq,psd\n1,abc\n", "x").is_err());
        let t = Table::parse("# units=Hz,furlongs\nfreq,psd\n1,2\n2,3\n", "x").unwrap();
        assert!(t.to_spectrum().is_err());
    }
}
