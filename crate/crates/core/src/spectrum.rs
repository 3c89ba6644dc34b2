//! Single-sided power spectral densities on uniform frequency grids, typed
//! by their physical units.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::marker::PhantomData;

use crate::constants::TWO_PI;
use crate::error::{Error, Result};

/// Marker for the units of a PSD.
pub trait PsdUnit: Copy + Default + Debug + Send + Sync + 'static {
    const TAG: &'static str;
}

macro_rules! psd_unit {
    ($(#[$m:meta])* $name:ident, $tag:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
        pub struct $name;
        impl PsdUnit for $name {
            const TAG: &'static str = $tag;
        }
    };
}

psd_unit!(
    /// Detector voltage, V²/Hz.
    VoltsSq,
    "V^2/Hz"
);
psd_unit!(
    /// Displacement, m²/Hz.
    MetersSq,
    "m^2/Hz"
);
psd_unit!(
    /// Angular frequency noise, (rad/s)²/Hz.
    AngularFrequencySq,
    "(rad/s)^2/Hz"
);
psd_unit!(
    /// Displacement normalized to 2·x_zpf², quanta/Hz.
    Quanta,
    "quanta/Hz"
);
psd_unit!(
    /// Dimensionless quantity such as normalized detuning, 1/Hz.
    Normalized,
    "1/Hz"
);

/// Uniform frequency grid in Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() || start < 0.0 {
            return Err(Error::input(format!(
                "grid needs start >= 0 and a positive step (start {start}, step {step})"
            )));
        }
        if len < 2 {
            return Err(Error::input("grid needs at least two points"));
        }
        Ok(Self { start, step, len })
    }

    /// `len` points centred on `center`, spanning ±`half_span` Hz.
    pub fn centered(center: f64, half_span: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::input("grid needs at least two points"));
        }
        Self::new(center - half_span, 2.0 * half_span / (len - 1) as f64, len)
    }

    pub fn freq(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn omega(&self, i: usize) -> f64 {
        TWO_PI * self.freq(i)
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.freq(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.freq(self.len - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<U: PsdUnit> {
    freqs: Vec<f64>,
    values: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
    unit: PhantomData<U>,
}

fn check_grid(freqs: &[f64]) -> Result<f64> {
    if freqs.len() < 2 {
        return Err(Error::input("spectrum needs at least two frequency points"));
    }
    if freqs.iter().any(|f| !f.is_finite()) {
        return Err(Error::input("non-finite frequency in grid"));
    }
    let n = freqs.len();
    let df = (freqs[n - 1] - freqs[0]) / (n - 1) as f64;
    for (i, w) in freqs.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(Error::input(format!("frequency grid not strictly increasing at index {}", i + 1)));
        }
        if (d - df).abs() > 1e-6 * df {
            return Err(Error::input(format!("frequency grid not uniform at index {} (step {d} vs mean {df})", i + 1)));
        }
    }
    Ok(df)
}

impl<U: PsdUnit> Spectrum<U> {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::input(format!("{} frequencies but {} PSD values", freqs.len(), values.len())));
        }
        check_grid(&freqs)?;
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::input(format!("PSD value {} at index {i} is negative or not finite", values[i])));
        }
        Ok(Self { freqs, values, metadata: BTreeMap::new(), unit: PhantomData })
    }

    pub fn on_grid(grid: &FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid.freqs(), values)
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn units(&self) -> &'static str {
        U::TAG
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Grid spacing in Hz.
    pub fn df(&self) -> f64 {
        (self.freqs[self.len() - 1] - self.freqs[0]) / (self.len() - 1) as f64
    }

    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid { start: self.freqs[0], step: self.df(), len: self.len() }
    }

    /// Multiplies every sample by a non-negative constant.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Domain { name: "scale", value: k, constraint: "non-negative and finite" });
        }
        Ok(Self {
            freqs: self.freqs.clone(),
            values: self.values.iter().map(|v| v * k).collect(),
            metadata: self.metadata.clone(),
            unit: PhantomData,
        })
    }

    /// Trapezoidal integral over the grid, ∫S df.
    pub fn integrate(&self) -> f64 {
        trapezoid(&self.values, self.df())
    }

    /// Reinterprets the samples in another unit. Only unit conversions
    /// inside this crate may do this.
    pub fn relabel<V: PsdUnit>(self) -> Spectrum<V> {
        Spectrum { freqs: self.freqs, values: self.values, metadata: self.metadata, unit: PhantomData }
    }

    pub(crate) fn map_values<V: PsdUnit>(&self, f: impl Fn(f64, f64) -> f64) -> Result<Spectrum<V>> {
        let values = self.freqs.iter().zip(&self.values).map(|(&fr, &v)| f(fr, v)).collect();
        let mut s = Spectrum::<V>::new(self.freqs.clone(), values)?;
        s.metadata = self.metadata.clone();
        Ok(s)
    }
}

pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// A spectrum whose unit is known only at run time, as read from a file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnySpectrum {
    Volts(Spectrum<VoltsSq>),
    Meters(Spectrum<MetersSq>),
    Frequency(Spectrum<AngularFrequencySq>),
    Quanta(Spectrum<Quanta>),
    Normalized(Spectrum<Normalized>),
}

pub const UNIT_TAGS: [&str; 5] = [VoltsSq::TAG, MetersSq::TAG, AngularFrequencySq::TAG, Quanta::TAG, Normalized::TAG];

impl AnySpectrum {
    pub fn from_tagged(tag: &str, freqs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(match tag.trim() {
            t if t == VoltsSq::TAG => Self::Volts(Spectrum::new(freqs, values)?),
            t if t == MetersSq::TAG => Self::Meters(Spectrum::new(freqs, values)?),
            t if t == AngularFrequencySq::TAG => Self::Frequency(Spectrum::new(freqs, values)?),
            t if t == Quanta::TAG => Self::Quanta(Spectrum::new(freqs, values)?),
            t if t == Normalized::TAG => Self::Normalized(Spectrum::new(freqs, values)?),
            other => return Err(Error::Units { expected: UNIT_TAGS.join(" | "), found: other.to_string() }),
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Volts(_) => VoltsSq::TAG,
            Self::Meters(_) => MetersSq::TAG,
            Self::Frequency(_) => AngularFrequencySq::TAG,
            Self::Quanta(_) => Quanta::TAG,
            Self::Normalized(_) => Normalized::TAG,
        }
    }

    pub fn freqs(&self) -> &[f64] {
        match self {
            Self::Volts(s) => s.freqs(),
            Self::Meters(s) => s.freqs(),
            Self::Frequency(s) => s.freqs(),
            Self::Quanta(s) => s.freqs(),
            Self::Normalized(s) => s.freqs(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Self::Volts(s) => s.values(),
            Self::Meters(s) => s.values(),
            Self::Frequency(s) => s.values(),
            Self::Quanta(s) => s.values(),
            Self::Normalized(s) => s.values(),
        }
    }

    /// Extracts the spectrum if it carries unit `U`, otherwise fails with a
    /// unit-mismatch error.
    pub fn into_typed<U: PsdUnit>(self) -> Result<Spectrum<U>> {
        if self.tag() != U::TAG {
            return Err(Error::Units { expected: U::TAG.to_string(), found: self.tag().to_string() });
        }
        let (freqs, values) = (self.freqs().to_vec(), self.values().to_vec());
        Spectrum::new(freqs, values)
    }
}

macro_rules! any_from {
    ($unit:ty, $variant:ident) => {
        impl From<Spectrum<$unit>> for AnySpectrum {
            fn from(s: Spectrum<$unit>) -> Self {
                AnySpectrum::$variant(s)
            }
        }
    };
}
any_from!(VoltsSq, Volts);
any_from!(MetersSq, Meters);
any_from!(AngularFrequencySq, Frequency);
any_from!(Quanta, Quanta);
any_from!(Normalized, Normalized);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Spectrum::<MetersSq>::new(vec![0.0, 1.0, 3.0], vec![1.0; 3]).is_err());
        assert!(Spectrum::<MetersSq>::new(vec![0.0, 2.0, 1.0], vec![1.0; 3]).is_err());
        assert!(Spectrum::<MetersSq>::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(Spectrum::<MetersSq>::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Spectrum::<MetersSq>::new(vec![0.0, 1.0, 2.0], vec![1.0; 3]).is_ok());
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let s = Spectrum::<VoltsSq>::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.integrate(), 4.5);
    }

    #[test]
    fn unit_tags_round_trip() {
        for tag in UNIT_TAGS {
            let s = AnySpectrum::from_tagged(tag, vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
            assert_eq!(s.tag(), tag);
        }
        let any = AnySpectrum::from_tagged("V^2/Hz", vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert!(matches!(any.clone().into_typed::<MetersSq>(), Err(Error::Units { .. })));
        assert!(any.into_typed::<VoltsSq>().is_ok());
        assert!(AnySpectrum::from_tagged("furlongs", vec![1.0, 2.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn centered_grid() {
        let g = FrequencyGrid::centered(100.0, 10.0, 21).unwrap();
        assert_eq!(g.freq(10), 100.0);
        assert!((g.end() - 110.0).abs() < 1e-12);
    }
}
