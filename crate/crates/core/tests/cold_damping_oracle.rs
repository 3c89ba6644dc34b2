use mimcool_core::constants::{hz_to_angular, TWO_PI};
use mimcool_core::feedback::{
    closed_loop_displacement_psd, cold_damping_integrals, cold_damping_occupancy, occupancy_from_psd, optimal_gain,
    ColdDamping, LoopModel,
};
use mimcool_core::limits::{feedback_min_occupancy_basic, Quanta};
use mimcool_core::MechanicalMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson quadrature with a per-panel absolute tolerance.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// ∫₀^∞ of a resonant integrand, split around the resonance and mapped
/// to a finite interval beyond it.
fn resonant_integral(f: &dyn Fn(f64) -> f64, omega: f64, width: f64, scale: f64) -> f64 {
    let tol = 1e-12 * scale;
    let lo = (omega - 50.0 * width).max(0.0);
    let hi = omega + 50.0 * width;
    let mut total = simpson(f, lo, hi, tol);
    if lo > 0.0 {
        total += simpson(f, 0.0, lo, tol);
    }
    // ω = hi/t, dω = hi/t² dt
    let g = |t: f64| if t == 0.0 { 0.0 } else { f(hi / t) * hi / (t * t) };
    total + simpson(&g, 0.0, 1.0, tol)
}

#[test]
fn closed_form_integrals_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let m: f64 = 10f64.powf(rng.random_range(-14.0..-10.0));
        let omega = TWO_PI * 10f64.powf(rng.random_range(4.0..6.5));
        let gamma = omega * 10f64.powf(rng.random_range(-6.0..-2.0));
        let g: f64 = rng.random_range(0.0..200.0);
        let gt = gamma * (1.0 + g);
        let chi2 = |w: f64| 1.0 / (m * m * ((omega * omega - w * w).powi(2) + gt * gt * w * w));
        let (i0, i2) = cold_damping_integrals(m, omega, gamma, g);
        let q0 = resonant_integral(&chi2, omega, gt, i0);
        let q2 = resonant_integral(&|w| chi2(w) * w * w, omega, gt, i2);
        assert!(((q0 - i0) / i0).abs() < 1e-8, "I0: {q0} vs {i0}");
        assert!(((q2 - i2) / i2).abs() < 1e-8, "I2: {q2} vs {i2}");
    }
}

fn paper_mode() -> MechanicalMode {
    MechanicalMode::new(hz_to_angular(1.3e6), hz_to_angular(9e-3), 2e-13, 300.0).unwrap()
}

/// Golden-section minimum of the cold-damping occupancy in log gain.
fn numeric_optimum(n_tot: f64, mode: &MechanicalMode, s_imp: f64) -> (f64, f64) {
    let f = |lg: f64| cold_damping_occupancy(n_tot, lg.exp(), mode, s_imp).unwrap().value();
    let (mut a, mut b) = (0.0f64, 30.0f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-12 {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let g = (0.5 * (a + b)).exp();
    (g, f(g.ln()))
}

#[test]
fn optimal_gain_formula_matches_minimizer() {
    let mode = paper_mode();
    let q = Quanta::for_mode(&mode);
    for (n_tot, n_imp) in [(5.61e6, 3.2e-5), (5.1e6, 1e-6), (1e4, 1e-4), (2e5, 5e-5)] {
        let (s_ff, s_imp) = (q.quanta_to_force(n_tot), q.quanta_to_imprecision(n_imp));
        let formula = optimal_gain(&mode, s_ff, s_imp).unwrap();
        let (numeric, n_min) = numeric_optimum(n_tot, &mode, s_imp);
        assert!(formula > 100.0);
        assert!(((numeric - formula) / formula).abs() < 0.01, "{numeric} vs {formula}");
        let floor = feedback_min_occupancy_basic(s_ff, s_imp).unwrap().value();
        assert!(((n_min - floor) / floor).abs() < 0.05, "{n_min} vs {floor}");
    }
}

#[test]
fn ground_state_and_thermal_normalization() {
    let mode = MechanicalMode::new(hz_to_angular(1.3e6), hz_to_angular(52.0), 2e-13, 300.0).unwrap();
    let q = Quanta::for_mode(&mode);
    for n in [0.0, 0.37, 1070.0, 4.8e6] {
        let model =
            LoopModel::new(mode, ColdDamping::for_mode(&mode, 0.0), 1.0, q.quanta_to_force(n + 0.5), 0.0).unwrap();
        let grid = model.auto_grid(400.0, 25.0).unwrap();
        let got = occupancy_from_psd(&closed_loop_displacement_psd(&model, &grid).unwrap(), mode.x_zpf()).unwrap();
        assert!((got - n).abs() < 1e-6 * (n + 1.0), "{got} vs {n}");
    }
}

#[test]
fn integrated_spectrum_matches_analytic_over_gains() {
    let mode = MechanicalMode::new(hz_to_angular(1.3e6), hz_to_angular(52.0), 2e-13, 300.0).unwrap();
    let q = Quanta::for_mode(&mode);
    let (n_tot, n_imp) = (1070.0, 3.2e-5 * 52.0 / 9e-3 * 1e-2);
    let s_imp = q.quanta_to_imprecision(n_imp);
    for g in [0.0, 0.3, 1.0, 4.0, 10.0, 40.0, 150.0] {
        let model =
            LoopModel::new(mode, ColdDamping::for_mode(&mode, g), 1.0, q.quanta_to_force(n_tot), s_imp).unwrap();
        let numeric = model.occupancy().unwrap();
        let analytic = cold_damping_occupancy(n_tot, g, &mode, s_imp).unwrap().value();
        assert!(((numeric - analytic) / analytic).abs() < 1e-6, "g={g}: {numeric} vs {analytic}");
    }
}
