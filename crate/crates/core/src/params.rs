//! Physical parameter sets of the membrane-in-the-middle system and the
//! scalar quantities derived directly from them.
//!
//! All rates and frequencies are angular (rad/s). Conversion to and from
//! ordinary frequency happens only at the I/O boundary.

use serde::{Deserialize, Serialize};

use crate::constants::{C_LIGHT, HBAR, K_B, TWO_PI};
use crate::error::{require_non_negative, require_positive, require_unit_interval, Error, Result};

/// A single mechanical mode coupled to a thermal bath.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    /// Angular resonance frequency, rad/s.
    pub omega_m: f64,
    /// Energy damping rate (FWHM linewidth), rad/s.
    pub gamma_m: f64,
    /// Effective mass, kg.
    pub m_eff: f64,
    /// Bath temperature, K.
    pub temperature: f64,
}

/// Quantities that follow from a [`MechanicalMode`] alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeQuantities {
    /// Zero-point fluctuation amplitude, m.
    pub x_zpf: f64,
    pub q_factor: f64,
    /// Classical bath occupancy k_B T / (ħ Ω_m).
    pub n_th: f64,
    /// Thermal decoherence rate n_th·Γ_m, rad/s.
    pub gamma_decoherence: f64,
}

impl MechanicalMode {
    pub fn new(omega_m: f64, gamma_m: f64, m_eff: f64, temperature: f64) -> Result<Self> {
        let mode = Self { omega_m, gamma_m, m_eff, temperature };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("omega_m", self.omega_m)?;
        require_positive("gamma_m", self.gamma_m)?;
        require_positive("m_eff", self.m_eff)?;
        require_positive("temperature", self.temperature)?;
        if !(self.omega_m / self.gamma_m).is_finite() {
            return Err(Error::Domain {
                name: "gamma_m",
                value: self.gamma_m,
                constraint: "finite quality factor omega_m/gamma_m",
            });
        }
        Ok(())
    }

    pub fn x_zpf(&self) -> f64 {
        (HBAR / (2.0 * self.m_eff * self.omega_m)).sqrt()
    }

    pub fn q_factor(&self) -> f64 {
        self.omega_m / self.gamma_m
    }

    /// Classical-limit bath occupancy; the Bose correction is below 1e-6
    /// relative for room-temperature MHz modes.
    pub fn n_th(&self) -> f64 {
        K_B * self.temperature / (HBAR * self.omega_m)
    }

    pub fn decoherence_rate(&self) -> f64 {
        self.n_th() * self.gamma_m
    }

    /// Thermal Langevin force PSD 4 m Γ k_B T (single-sided, N²/Hz).
    pub fn thermal_force_psd(&self) -> f64 {
        4.0 * self.m_eff * self.gamma_m * K_B * self.temperature
    }

    /// Peak displacement PSD of the ground state, 4 x_zpf² / Γ_m (m²/Hz).
    pub fn zero_point_peak_psd(&self) -> f64 {
        4.0 * self.x_zpf().powi(2) / self.gamma_m
    }

    /// The same mode with frequency and damping modified by backaction.
    /// Mass and bath temperature are unchanged.
    pub fn shifted(&self, delta_omega: f64, delta_gamma: f64) -> Result<Self> {
        Self::new(self.omega_m + delta_omega, self.gamma_m + delta_gamma, self.m_eff, self.temperature)
    }
}

pub fn derive_mode_quantities(mode: &MechanicalMode) -> Result<ModeQuantities> {
    mode.validate()?;
    Ok(ModeQuantities {
        x_zpf: mode.x_zpf(),
        q_factor: mode.q_factor(),
        n_th: mode.n_th(),
        gamma_decoherence: mode.decoherence_rate(),
    })
}

/// Fabry-Pérot cavity parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalCavity {
    /// FWHM energy decay rate, rad/s.
    pub kappa: f64,
    /// Cavity length, m.
    pub length: f64,
    /// Laser wavelength, m.
    pub wavelength: f64,
    /// Fraction of the total decay through the input (fiber) mirror.
    pub eta_c: f64,
    /// Input mirror power transmissivity.
    pub t_f: Option<f64>,
    /// Back mirror power transmissivity.
    pub t_e: Option<f64>,
}

/// Largest accepted difference between `eta_c` and T_f/(T_f+T_e).
pub const OVERCOUPLING_TOLERANCE: f64 = 0.02;

impl OpticalCavity {
    pub fn validate(&self) -> Result<()> {
        require_positive("kappa", self.kappa)?;
        require_positive("length", self.length)?;
        require_positive("wavelength", self.wavelength)?;
        require_unit_interval("eta_c", self.eta_c)?;
        if let (Some(t_f), Some(t_e)) = (self.t_f, self.t_e) {
            require_non_negative("t_f", t_f)?;
            require_non_negative("t_e", t_e)?;
            if t_f + t_e <= 0.0 {
                return Err(Error::Domain { name: "t_f + t_e", value: t_f + t_e, constraint: "strictly positive" });
            }
            let implied = t_f / (t_f + t_e);
            if (implied - self.eta_c).abs() > OVERCOUPLING_TOLERANCE {
                return Err(Error::Domain {
                    name: "eta_c",
                    value: self.eta_c,
                    constraint: "consistent with t_f/(t_f+t_e) to within 0.02",
                });
            }
        }
        Ok(())
    }

    /// Optical angular frequency 2πc/λ.
    pub fn omega_c(&self) -> f64 {
        TWO_PI * C_LIGHT / self.wavelength
    }

    /// Free spectral range c/2L in Hz.
    pub fn free_spectral_range_hz(&self) -> f64 {
        C_LIGHT / (2.0 * self.length)
    }

    /// Finesse as FSR/κ (both in the same units).
    pub fn finesse(&self) -> f64 {
        TWO_PI * self.free_spectral_range_hz() / self.kappa
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamRole {
    Probe,
    Cooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalBeam {
    /// Power coupled into the cavity's spatial mode, W.
    pub power_in: f64,
    /// Laser-cavity detuning, rad/s (negative = red).
    pub detuning: f64,
    /// Field-enhanced coupling g0·√n_cav, rad/s.
    pub g: f64,
    pub role: BeamRole,
}

impl OpticalBeam {
    pub fn validate(&self) -> Result<()> {
        require_non_negative("power_in", self.power_in)?;
        require_non_negative("g", self.g)?;
        if !self.detuning.is_finite() {
            return Err(Error::Domain { name: "detuning", value: self.detuning, constraint: "finite" });
        }
        Ok(())
    }

    /// Quantum cooperativity 4g²/(κγ).
    pub fn cooperativity(&self, kappa: f64, gamma_decoherence: f64) -> f64 {
        4.0 * self.g * self.g / (kappa * gamma_decoherence)
    }
}

/// Field-enhanced coupling for a target cooperativity, the inverse of
/// [`OpticalBeam::cooperativity`].
pub fn coupling_for_cooperativity(c_q: f64, kappa: f64, gamma_decoherence: f64) -> f64 {
    (c_q * kappa * gamma_decoherence / 4.0).sqrt()
}

/// Steady-state intracavity photon number for a coherent drive.
pub fn intracavity_photons(cavity: &OpticalCavity, beam: &OpticalBeam) -> Result<f64> {
    require_positive("kappa", cavity.kappa)?;
    require_positive("wavelength", cavity.wavelength)?;
    beam.validate()?;
    let photon_flux = beam.power_in / (HBAR * cavity.omega_c());
    let half = 0.5 * cavity.kappa;
    Ok(cavity.eta_c * cavity.kappa * photon_flux / (beam.detuning.powi(2) + half * half))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    /// Vacuum optomechanical coupling, rad/s.
    pub g0: f64,
    /// Membrane field reflectivity |r|.
    pub membrane_reflectivity: f64,
    /// Transverse overlap ξ of optical and mechanical mode shapes.
    pub overlap: f64,
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        require_non_negative("g0", self.g0)?;
        require_unit_interval("membrane_reflectivity", self.membrane_reflectivity)?;
        require_unit_interval("overlap", self.overlap)
    }

    /// Cavity frequency pull dω_c/dx = g0/x_zpf, rad/s per m.
    pub fn frequency_pull(&self, mode: &MechanicalMode) -> f64 {
        self.g0 / mode.x_zpf()
    }
}

/// Upper bound on the vacuum coupling at the optimal membrane position.
pub fn g0_max(cavity: &OpticalCavity, mode: &MechanicalMode, coupling: &CouplingConfig) -> Result<f64> {
    require_positive("length", cavity.length)?;
    require_positive("wavelength", cavity.wavelength)?;
    mode.validate()?;
    coupling.validate()?;
    Ok(2.0 * cavity.omega_c() / cavity.length * coupling.membrane_reflectivity * mode.x_zpf() * coupling.overlap)
}

/// How the fiber recoupling factor enters the detection efficiency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberLossConvention {
    /// Use η_r = |β|² directly.
    #[default]
    Power,
    /// Use the amplitude |β| = √η_r.
    Amplitude,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    /// Cavity-to-fiber mode matching ε.
    pub mode_matching: f64,
    pub overcoupling: f64,
    /// Off-resonance fiber recoupling η_r = |β|².
    pub fiber_loss: f64,
    pub visibility: f64,
    pub quantum_efficiency: f64,
    #[serde(default)]
    pub convention: FiberLossConvention,
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        require_unit_interval("mode_matching", self.mode_matching)?;
        require_unit_interval("overcoupling", self.overcoupling)?;
        require_unit_interval("fiber_loss", self.fiber_loss)?;
        require_unit_interval("visibility", self.visibility)?;
        require_unit_interval("quantum_efficiency", self.quantum_efficiency)
    }
}

/// Overall detection efficiency η_det, the product of the chain's factors.
pub fn detection_efficiency(chain: &DetectionChain) -> Result<f64> {
    chain.validate()?;
    let fiber = match chain.convention {
        FiberLossConvention::Power => chain.fiber_loss,
        FiberLossConvention::Amplitude => chain.fiber_loss.sqrt(),
    };
    Ok(chain.mode_matching * chain.overcoupling * fiber * chain.visibility * chain.quantum_efficiency)
}

/// Mode matching ε from the on-resonance transmitted power fraction,
/// inverting P_t/P_in = 4 ε η_c (1 − η_c).
pub fn mode_matching_from_transmission(transmitted_fraction: f64, eta_c: f64) -> Result<f64> {
    require_non_negative("transmitted_fraction", transmitted_fraction)?;
    require_unit_interval("eta_c", eta_c)?;
    let denom = 4.0 * eta_c * (1.0 - eta_c);
    if denom == 0.0 {
        return Err(Error::DivisionByZero(format!("eta_c = {eta_c} leaves no transmission channel")));
    }
    Ok(transmitted_fraction / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hz_to_angular;

    fn paper_mode() -> MechanicalMode {
        MechanicalMode::new(hz_to_angular(1.3e6), hz_to_angular(9e-3), 200e-15, 300.0).unwrap()
    }

    fn paper_cavity() -> OpticalCavity {
        OpticalCavity {
            kappa: hz_to_angular(340e6),
            length: 95e-6,
            wavelength: 1542e-9,
            eta_c: 0.9,
            t_f: None,
            t_e: None,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn paper_mode_quantities() {
        let q = derive_mode_quantities(&paper_mode()).unwrap();
        assert!(rel(q.x_zpf, 5.7e-15) < 0.02, "x_zpf {}", q.x_zpf);
        assert!(rel(q.q_factor, 1.44e8) < 0.05);
        // k_B T/ħΩ at exactly 300 K and 1.3 MHz, evaluated in 30-digit arithmetic.
        assert!(rel(q.n_th, 4_808_450.569_867_978) < 1e-12);
        assert!(rel(q.n_th, 5.1e6) < 0.10);
    }

    #[test]
    fn rejects_non_positive_fields() {
        let mut mode = paper_mode();
        mode.m_eff = 0.0;
        assert!(matches!(derive_mode_quantities(&mode), Err(Error::Domain { name: "m_eff", .. })));
        assert!(MechanicalMode::new(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn x_zpf_scaling() {
        let mode = paper_mode();
        let heavier = MechanicalMode { m_eff: 2.0 * mode.m_eff, ..mode };
        assert!(rel(mode.x_zpf() / heavier.x_zpf(), 2f64.sqrt()) < 1e-14);
        let faster = MechanicalMode { omega_m: 4.0 * mode.omega_m, ..mode };
        assert!(rel(mode.x_zpf() / faster.x_zpf(), 2.0) < 1e-14);
    }

    #[test]
    fn decoherence_invariant_under_bath_rescaling() {
        let mode = paper_mode();
        let rescaled = MechanicalMode { temperature: 2.0 * mode.temperature, gamma_m: mode.gamma_m / 2.0, ..mode };
        assert!(rel(rescaled.decoherence_rate(), mode.decoherence_rate()) < 1e-14);
    }

    #[test]
    fn intracavity_photons_limits() {
        let cav = paper_cavity();
        let mut beam = OpticalBeam { power_in: 780e-6, detuning: 0.0, g: 0.0, role: BeamRole::Cooling };
        let resonant = intracavity_photons(&cav, &beam).unwrap();
        let expected = 4.0 * cav.eta_c * beam.power_in / (HBAR * cav.omega_c() * cav.kappa);
        assert!(rel(resonant, expected) < 1e-14);

        beam.detuning = 1e6 * cav.kappa;
        assert!(intracavity_photons(&cav, &beam).unwrap() < 1e-12 * resonant);

        // Independent 30-digit evaluation of the same operating point.
        beam.detuning = hz_to_angular(-80e6);
        let n = intracavity_photons(&cav, &beam).unwrap();
        assert!(rel(n, 8_353_511.927_435_639) < 1e-12, "n_cav {n}");
    }

    #[test]
    fn intracavity_photons_rejects_zero_wavelength() {
        let cav = OpticalCavity { wavelength: 0.0, ..paper_cavity() };
        let beam = OpticalBeam { power_in: 1e-3, detuning: 0.0, g: 0.0, role: BeamRole::Probe };
        assert!(intracavity_photons(&cav, &beam).is_err());
    }

    #[test]
    fn g0_max_values() {
        let cav = paper_cavity();
        let mode = paper_mode();
        let ideal = CouplingConfig { g0: 0.0, membrane_reflectivity: 1.0, overlap: 1.0 };
        let g = g0_max(&cav, &mode, &ideal).unwrap();
        assert!(rel(g / TWO_PI, 23.2e3) < 0.01, "g0max/2π = {}", g / TWO_PI);

        let none = CouplingConfig { overlap: 0.0, ..ideal };
        assert_eq!(g0_max(&cav, &mode, &none).unwrap(), 0.0);

        let long = OpticalCavity { length: 2.0 * cav.length, ..cav };
        assert!(rel(g0_max(&long, &mode, &ideal).unwrap(), g / 2.0) < 1e-14);

        let realistic = CouplingConfig { membrane_reflectivity: 0.14, ..ideal };
        assert!(g0_max(&cav, &mode, &realistic).unwrap() / TWO_PI < 3.3e3);
    }

    fn table_chain() -> DetectionChain {
        DetectionChain {
            mode_matching: 0.04,
            overcoupling: 0.9,
            fiber_loss: 0.42,
            visibility: 0.9,
            quantum_efficiency: 0.8,
            convention: FiberLossConvention::Power,
        }
    }

    #[test]
    fn detection_efficiency_table_values() {
        let eta = detection_efficiency(&table_chain()).unwrap();
        assert!(rel(eta, 0.012) < 0.1, "eta_det {eta}");

        let amp = DetectionChain { convention: FiberLossConvention::Amplitude, ..table_chain() };
        assert!(rel(detection_efficiency(&amp).unwrap(), eta / 0.42f64.sqrt()) < 1e-14);

        let lossless = DetectionChain {
            mode_matching: 1.0,
            overcoupling: 1.0,
            fiber_loss: 1.0,
            visibility: 1.0,
            quantum_efficiency: 1.0,
            convention: FiberLossConvention::Power,
        };
        assert_eq!(detection_efficiency(&lossless).unwrap(), 1.0);
        let dark = DetectionChain { visibility: 0.0, ..table_chain() };
        assert_eq!(detection_efficiency(&dark).unwrap(), 0.0);
        let bad = DetectionChain { quantum_efficiency: 1.2, ..table_chain() };
        assert!(detection_efficiency(&bad).is_err());
    }

    #[test]
    fn mode_matching_inversion() {
        let eps = mode_matching_from_transmission(0.0144, 0.9).unwrap();
        assert!(rel(eps, 0.04) < 1e-12);
        assert_eq!(mode_matching_from_transmission(0.0, 0.3).unwrap(), 0.0);
        assert!(rel(mode_matching_from_transmission(1.0, 0.5).unwrap(), 1.0) < 1e-15);
        assert!(matches!(mode_matching_from_transmission(0.1, 1.0), Err(Error::DivisionByZero(_))));
        assert!(mode_matching_from_transmission(0.1, 0.0).is_err());
    }

    #[test]
    fn overcoupling_cross_check() {
        let mut cav = paper_cavity();
        cav.t_f = Some(9e-4);
        cav.t_e = Some(1e-4);
        assert!(cav.validate().is_ok());
        cav.t_e = Some(9e-4);
        assert!(cav.validate().is_err());
    }

    #[test]
    fn finesse_from_fsr() {
        let f = paper_cavity().finesse();
        assert!(rel(f, 4400.0) < 0.10, "finesse {f}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn photons_decrease_with_detuning(d1 in 0.0f64..5e9, d2 in 0.0f64..5e9, p in 1e-6f64..1e-2) {
                let cav = paper_cavity();
                let beam = |d: f64| OpticalBeam { power_in: p, detuning: d, g: 0.0, role: BeamRole::Probe };
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let n_lo = intracavity_photons(&cav, &beam(-lo)).unwrap();
                let n_hi = intracavity_photons(&cav, &beam(hi)).unwrap();
                prop_assert!(n_hi <= n_lo * (1.0 + 1e-14));
                let doubled = intracavity_photons(&cav, &OpticalBeam { power_in: 2.0 * p, ..beam(lo) }).unwrap();
                prop_assert!((doubled / intracavity_photons(&cav, &beam(lo)).unwrap() - 2.0).abs() < 1e-13);
            }

            #[test]
            fn efficiency_monotone(base in prop::array::uniform5(0.0f64..1.0), which in 0usize..5, bump in 0.0f64..1.0) {
                let chain = |f: [f64; 5]| DetectionChain {
                    mode_matching: f[0], overcoupling: f[1], fiber_loss: f[2],
                    visibility: f[3], quantum_efficiency: f[4], convention: FiberLossConvention::Power,
                };
                let mut raised = base;
                raised[which] = base[which] + (1.0 - base[which]) * bump;
                prop_assert!(detection_efficiency(&chain(raised)).unwrap() >= detection_efficiency(&chain(base)).unwrap());
            }
        }
    }
}
