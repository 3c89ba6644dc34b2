//! Physical dimensions of configuration values and their unit suffixes.
//!
//! Frequencies given in Hz-type units are converted to angular rates.

use std::fmt;

use mimcool_core::constants::TWO_PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    /// Rates and frequencies, stored in rad/s.
    Frequency,
    Length,
    Mass,
    Time,
    Power,
    Pressure,
    Temperature,
    /// Plain number; `%` is accepted.
    Ratio,
    Angle,
    /// Angular frequency noise, (rad/s)²/Hz.
    FrequencyNoise,
    /// Displacement noise, m²/Hz.
    DisplacementNoise,
    /// Non-negative integer.
    Count,
    /// Free text.
    Text,
}

impl Dim {
    /// Unit in which values are stored and written back.
    pub fn canonical(self) -> &'static str {
        match self {
            Dim::Frequency => "rad/s",
            Dim::Length => "m",
            Dim::Mass => "kg",
            Dim::Time => "s",
            Dim::Power => "W",
            Dim::Pressure => "Pa",
            Dim::Temperature => "K",
            Dim::Ratio | Dim::Count | Dim::Text => "",
            Dim::Angle => "rad",
            Dim::FrequencyNoise => "(rad/s)^2/Hz",
            Dim::DisplacementNoise => "m^2/Hz",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        let s = match (self, unit) {
            (Dim::Frequency, "rad/s") => 1.0,
            (Dim::Frequency, "mHz") => 1e-3 * TWO_PI,
            (Dim::Frequency, "Hz") => TWO_PI,
            (Dim::Frequency, "kHz") => 1e3 * TWO_PI,
            (Dim::Frequency, "MHz") => 1e6 * TWO_PI,
            (Dim::Frequency, "GHz") => 1e9 * TWO_PI,
            (Dim::Length, "m") => 1.0,
            (Dim::Length, "mm") => 1e-3,
            (Dim::Length, "µm" | "um") => 1e-6,
            (Dim::Length, "nm") => 1e-9,
            (Dim::Length, "pm") => 1e-12,
            (Dim::Length, "fm") => 1e-15,
            (Dim::Mass, "kg") => 1.0,
            (Dim::Mass, "g") => 1e-3,
            (Dim::Mass, "mg") => 1e-6,
            (Dim::Mass, "µg" | "ug") => 1e-9,
            (Dim::Mass, "ng") => 1e-12,
            (Dim::Mass, "pg") => 1e-15,
            (Dim::Time, "s") => 1.0,
            (Dim::Time, "ms") => 1e-3,
            (Dim::Time, "µs" | "us") => 1e-6,
            (Dim::Time, "ns") => 1e-9,
            (Dim::Power, "W") => 1.0,
            (Dim::Power, "mW") => 1e-3,
            (Dim::Power, "µW" | "uW") => 1e-6,
            (Dim::Power, "nW") => 1e-9,
            (Dim::Pressure, "Pa") => 1.0,
            (Dim::Pressure, "mbar") => 100.0,
            (Dim::Pressure, "bar") => 1e5,
            (Dim::Temperature, "K") => 1.0,
            (Dim::Ratio, "") => 1.0,
            (Dim::Ratio, "%") => 1e-2,
            (Dim::Angle, "rad") => 1.0,
            (Dim::Angle, "deg") => std::f64::consts::PI / 180.0,
            (Dim::FrequencyNoise, "(rad/s)^2/Hz") => 1.0,
            (Dim::FrequencyNoise, "Hz^2/Hz") => TWO_PI * TWO_PI,
            (Dim::DisplacementNoise, "m^2/Hz") => 1.0,
            _ => return None,
        };
        Some(s)
    }

    pub fn accepted(self) -> &'static str {
        match self {
            Dim::Frequency => "rad/s, mHz, Hz, kHz, MHz, GHz",
            Dim::Length => "m, mm, µm, nm, pm, fm",
            Dim::Mass => "kg, g, mg, µg, ng, pg",
            Dim::Time => "s, ms, µs, ns",
            Dim::Power => "W, mW, µW, nW",
            Dim::Pressure => "Pa, mbar, bar",
            Dim::Temperature => "K",
            Dim::Ratio => "no unit or %",
            Dim::Angle => "rad, deg",
            Dim::FrequencyNoise => "(rad/s)^2/Hz, Hz^2/Hz",
            Dim::DisplacementNoise => "m^2/Hz",
            Dim::Count => "an integer without unit",
            Dim::Text => "text",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Number(f64),
    Count(u64),
    Text(String),
}

impl Value {
    pub fn number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Count(n) => Some(*n as f64),
            Value::Text(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitError(pub String);

impl fmt::Display for UnitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parse `<number> [unit]` into the canonical unit of `dim`.
pub fn parse_value(text: &str, dim: Dim) -> Result<Value, UnitError> {
    let text = text.trim();
    match dim {
        Dim::Text => return Ok(Value::Text(text.to_string())),
        Dim::Count => {
            return text
                .parse::<u64>()
                .map(Value::Count)
                .map_err(|_| UnitError(format!("`{text}` is not a non-negative integer")))
        }
        _ => {}
    }
    let (num, unit) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => match text.strip_suffix('%') {
            Some(n) => (n, "%"),
            None => (text, ""),
        },
    };
    let v: f64 = num.parse().map_err(|_| UnitError(format!("`{num}` is not a number")))?;
    if !v.is_finite() {
        return Err(UnitError(format!("`{num}` is not finite")));
    }
    let scale = dim
        .scale(unit)
        .ok_or_else(|| UnitError(format!("unit `{unit}` not accepted here (expected {})", dim.accepted())))?;
    Ok(Value::Number(v * scale))
}

/// Render a value in the canonical unit so that parsing it back is exact.
pub fn format_value(value: &Value, dim: Dim) -> String {
    match value {
        Value::Number(v) => {
            let unit = dim.canonical();
            if unit.is_empty() {
                format!("{v:?}")
            } else {
                format!("{v:?} {unit}")
            }
        }
        Value::Count(n) => n.to_string(),
        Value::Text(t) => t.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_units_become_angular() {
        for (text, want) in [("1.3 MHz", 1.3e6), ("9 mHz", 9e-3), ("-80 MHz", -80e6)] {
            let got = parse_value(text, Dim::Frequency).unwrap().number().unwrap();
            assert!((got / (want * TWO_PI) - 1.0).abs() < 1e-15, "{text}: {got}");
        }
    }

    #[test]
    fn prefixed_units() {
        let close = |t: &str, d: Dim, want: f64| {
            let v = parse_value(t, d).unwrap().number().unwrap();
            assert!((v - want).abs() <= 1e-12 * want.abs(), "{t}: {v}");
        };
        close("95 µm", Dim::Length, 95e-6);
        close("95 um", Dim::Length, 95e-6);
        close("200 pg", Dim::Mass, 2e-13);
        close("300 ns", Dim::Time, 3e-7);
        close("780 µW", Dim::Power, 7.8e-4);
        close("1e-3 mbar", Dim::Pressure, 0.1);
        close("42%", Dim::Ratio, 0.42);
        close("180 deg", Dim::Angle, std::f64::consts::PI);
    }

    #[test]
    fn rejects_wrong_units() {
        assert!(parse_value("3 kg", Dim::Frequency).is_err());
        assert!(parse_value("3", Dim::Frequency).is_err());
        assert!(parse_value("abc Hz", Dim::Frequency).is_err());
        assert!(parse_value("-1", Dim::Count).is_err());
    }

    #[test]
    fn canonical_round_trip_is_exact() {
        for (t, d) in [("1.3 MHz", Dim::Frequency), ("77.86 kHz", Dim::Frequency), ("1 Hz^2/Hz", Dim::FrequencyNoise)] {
            let v = parse_value(t, d).unwrap();
            assert_eq!(parse_value(&format_value(&v, d), d).unwrap(), v);
        }
    }
}
