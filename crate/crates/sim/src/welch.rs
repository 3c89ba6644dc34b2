//! Welch power spectral density estimation with a Hann window.

use std::sync::Arc;

use mimcool_core::spectrum::{PsdUnit, Spectrum};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SimError};

/// Streaming Welch estimator: samples are pushed one at a time and each
/// completed segment is transformed and accumulated.
pub struct WelchAccumulator {
    segment: usize,
    hop: usize,
    dt: f64,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    pending: Vec<f64>,
    scratch: Vec<Complex<f64>>,
    sum: Vec<f64>,
    segments: usize,
}

impl WelchAccumulator {
    pub fn new(segment: usize, overlap: f64, dt: f64) -> Result<Self> {
        if segment < 4 {
            return Err(SimError::config("Welch segment must hold at least 4 samples"));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(SimError::config(format!("overlap {overlap} outside [0, 1)")));
        }
        if !(dt > 0.0) {
            return Err(SimError::config("sample interval must be positive"));
        }
        let hop = (((1.0 - overlap) * segment as f64).round() as usize).max(1);
        // periodic Hann
        let window: Vec<f64> =
            (0..segment).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / segment as f64).cos()).collect();
        let window_power = window.iter().map(|w| w * w).sum();
        Ok(Self {
            segment,
            hop,
            dt,
            window,
            window_power,
            fft: FftPlanner::new().plan_fft_forward(segment),
            pending: Vec::with_capacity(segment),
            scratch: vec![Complex::default(); segment],
            sum: vec![0.0; segment / 2 + 1],
            segments: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.pending.push(x);
        if self.pending.len() == self.segment {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let mean = self.pending.iter().sum::<f64>() / self.segment as f64;
        for ((c, &x), &w) in self.scratch.iter_mut().zip(&self.pending).zip(&self.window) {
            *c = Complex::new((x - mean) * w, 0.0);
        }
        self.fft.process(&mut self.scratch);
        let n = self.segment;
        let scale = self.dt / self.window_power;
        for (k, s) in self.sum.iter_mut().enumerate() {
            let two_sided = self.scratch[k].norm_sqr() * scale;
            *s += if k == 0 || 2 * k == n { two_sided } else { 2.0 * two_sided };
        }
        self.segments += 1;
        self.pending.drain(..self.hop.min(self.segment));
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Averaged single-sided PSD from DC to Nyquist.
    pub fn finish<U: PsdUnit>(&self) -> Result<Spectrum<U>> {
        if self.segments == 0 {
            return Err(SimError::config("no complete Welch segment was accumulated"));
        }
        let df = 1.0 / (self.segment as f64 * self.dt);
        let freqs = (0..self.sum.len()).map(|k| k as f64 * df).collect();
        let values = self.sum.iter().map(|s| s / self.segments as f64).collect();
        Ok(Spectrum::new(freqs, values)?
            .with_metadata("estimator", "welch, hann window, mean removed")
            .with_metadata("segments", self.segments.to_string()))
    }
}

/// Welch PSD of a stored series sampled every `dt` seconds.
pub fn welch_psd<U: PsdUnit>(series: &[f64], dt: f64, segment: usize, overlap: f64) -> Result<Spectrum<U>> {
    if segment > series.len() {
        return Err(SimError::config(format!("segment length {segment} exceeds series length {}", series.len())));
    }
    let mut acc = WelchAccumulator::new(segment, overlap, dt)?;
    series.iter().for_each(|&x| acc.push(x));
    acc.finish()
}
