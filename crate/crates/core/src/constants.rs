//! Physical constants (CODATA 2018, SI).

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Molar gas constant, J/(mol·K).
pub const R_GAS: f64 = 8.314_462_618;
/// Speed of light in vacuum, m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Converts an ordinary frequency (Hz) to angular units (rad/s).
#[inline]
pub fn hz_to_angular(f: f64) -> f64 {
    TWO_PI * f
}

/// Converts an angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / TWO_PI
}
