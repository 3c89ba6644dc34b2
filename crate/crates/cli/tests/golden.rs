//! Golden-file tests: every subcommand runs on the bundled configuration
//! and deterministic synthetic inputs, and its JSON report and data files
//! are compared numerically with the files under `tests/golden/`.
//! Run with `UPDATE_GOLDEN=1` to regenerate them.

use std::path::{Path, PathBuf};
use std::process::Command;

use mimcool::csvio::Table;
use mimcool::Config;
use mimcool_core::constants::{hz_to_angular, TWO_PI};
use mimcool_core::feedback::{inloop_psd, ColdDamping, LoopModel};
use mimcool_core::limits::Quanta;
use mimcool_core::spectral_fit::{
    closed_loop_model, lorentzian, ClosedLoopFixed, GasDampingModel, GasMaterial, HeatingModel, ReflectionModel,
};
use mimcool_core::spectrum::{Normalized, VoltsSq};
use mimcool_core::{BeamRole, FrequencyGrid, OpticalBeam, Spectrum};
use serde_json::Value;
use tempfile::TempDir;

const REL_TOL: f64 = 1e-9;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Small deterministic ripple standing in for measurement noise.
fn ripple(i: usize) -> f64 {
    1.0 + 0.01 * (0.7 * i as f64).sin()
}

fn write_inputs(dir: &Path) {
    let e = Config::paper().experiment().unwrap();

    let grid = FrequencyGrid::centered(1.3e6, 1.5e3, 601).unwrap();
    let vals = (0..grid.len).map(|i| lorentzian(grid.freq(i), 1.3e6 + 3.0, 52.0, 2e-20, 3e-25) * ripple(i)).collect();
    let s: Spectrum<mimcool_core::spectrum::MetersSq> = Spectrum::on_grid(&grid, vals).unwrap();
    Table::from_spectrum(&s).write(&dir.join("lorentzian.csv")).unwrap();

    let mode = e.loop_mode().unwrap();
    let q = Quanta::for_mode(&mode);
    let n = e.anchor_occupancy().unwrap();
    let anchor = LoopModel::new(
        mode,
        ColdDamping::for_mode(&mode, 0.0),
        1.0,
        q.quanta_to_force(n + 0.5),
        q.quanta_to_imprecision(0.05),
    )
    .unwrap();
    let grid = FrequencyGrid::centered(mode.omega_m / TWO_PI, 2.6e3, 2601).unwrap();
    let v: Spectrum<VoltsSq> = inloop_psd(&anchor, &grid).unwrap().scaled(1.0 / 2.5e-9).unwrap().relabel();
    Table::from_spectrum(&v).write(&dir.join("anchor.csv")).unwrap();

    let filter = e.feedback_filter(mode.omega_m).unwrap();
    let phi = filter.phase_offset + 0.05;
    let fixed = ClosedLoopFixed { mode, bare_gamma: e.mode.gamma_m, n_tot: e.bare_force_quanta().unwrap(), filter };
    let m = closed_loop_model(&fixed, 40.0, phi, 3.2e-5).unwrap();
    let grid = FrequencyGrid::centered(mode.omega_m / TWO_PI, 15e3, 751).unwrap();
    Table::from_spectrum(&inloop_psd(&m, &grid).unwrap()).write(&dir.join("inloop.csv")).unwrap();

    let r = ReflectionModel { eta_r: 0.92, eta_l: 0.55, asym: 0.2, kappa: e.cavity.kappa };
    let mut t = Table::new(&["detuning", "reflection"], &["Hz", ""]);
    for i in -200i32..=200 {
        let f = i as f64 * 340e6 / 40.0;
        t.push(vec![f, r.eval(f * TWO_PI) * ripple(i.unsigned_abs() as usize)]);
    }
    t.write(&dir.join("dip.csv")).unwrap();

    let gas = GasDampingModel {
        q0: 1.4e8,
        a_q: 1.0,
        material: GasMaterial::silicon_nitride_in_air(e.thickness),
        omega_m: e.mode.omega_m,
    };
    let mut t = Table::new(&["pressure", "q"], &["Pa", ""]);
    for (i, p) in [1e-6, 2e-6, 5e-6, 1e-5, 2e-5, 5e-5, 1e-4, 2e-4].into_iter().enumerate() {
        t.push(vec![p, gas.q(p) * ripple(i)]);
    }
    t.write(&dir.join("qp.csv")).unwrap();

    let h = HeatingModel { a_dba: hz_to_angular(6e4), a_eh: 100.0, gamma0: hz_to_angular(5.0), area0: 1.0 };
    let mut t = Table::new(&["power", "area", "stderr"], &["W", "", ""]);
    for i in 0..12 {
        let p = i as f64 * 80e-6;
        let a = 1.0 / h.inverse_area(p);
        t.push(vec![p, if i == 0 { 1.0 } else { a * ripple(i) }, 0.01 * a]);
    }
    t.write(&dir.join("heating.csv")).unwrap();

    let cal_kappa = e.cavity.kappa;
    let lambda = 0.5 * (1.0 - 0.3f64.sqrt());
    let pull2 = (e.coupling.g0 / e.mode.x_zpf()).powi(2);
    let grid = FrequencyGrid::new(0.5e6, 1000.0, 2001).unwrap();
    let tone_bin = ((2.2e6 - grid.start) / grid.step).round() as usize;
    let vals = (0..grid.len)
        .map(|i| {
            let sxx = 1e-34 * (1.0 + 0.3e6 / grid.freq(i));
            let floor = sxx * pull2 * 16.0 * lambda * lambda / (cal_kappa * cal_kappa) * 4e-3;
            let tone = if i == tone_bin { 4e-3 * 0.3 * 0.05f64.powi(2) / grid.step } else { 0.0 };
            floor * ripple(i) + tone
        })
        .collect();
    let s: Spectrum<VoltsSq> = Spectrum::on_grid(&grid, vals).unwrap();
    Table::from_spectrum(&s).write(&dir.join("freqnoise.csv")).unwrap();

    let grid = FrequencyGrid::new(0.0, 1e3, 400).unwrap();
    let vals = (0..grid.len)
        .map(|i| {
            let f = grid.freq(i);
            lorentzian(f, 60e3, 4e3, 1e-3, 0.0) + lorentzian(f, 95e3, 6e3, 6e-4, 0.0)
        })
        .collect();
    let s: Spectrum<Normalized> = Spectrum::on_grid(&grid, vals).unwrap();
    Table::from_spectrum(&s).write(&dir.join("detuning.csv")).unwrap();

    let (d, k, w, g0) = (e.cooling.detuning, e.cavity.kappa, e.mode.omega_m, e.coupling.g0);
    let mut t = Table::new(&["power", "shift"], &["W", "Hz"]);
    for (i, p) in [100e-6, 250e-6, 400e-6, 600e-6, 780e-6].into_iter().enumerate() {
        let beam = OpticalBeam { power_in: 0.0094 * p, detuning: d, g: 0.0, role: BeamRole::Cooling };
        let nc = mimcool_core::params::intracavity_photons(&e.cavity, &beam).unwrap();
        let shift = -15.0 + mimcool_core::backaction::optical_spring(g0 * nc.sqrt(), d, k, w) / TWO_PI;
        t.push(vec![p, shift * ripple(i)]);
    }
    t.write(&dir.join("spring.csv")).unwrap();

    let mut t = Table::new(&["g", "linewidth"], &["Hz", "Hz"]);
    for (i, gh) in [200e3, 350e3, 500e3, 644e3].into_iter().enumerate() {
        let g = hz_to_angular(gh);
        let total = e.mode.gamma_m + hz_to_angular(4.6) + mimcool_core::backaction::optical_damping(g, d, k, w);
        t.push(vec![gh, total / TWO_PI * ripple(i)]);
    }
    t.write(&dir.join("damping.csv")).unwrap();
}

fn assert_close(path: &str, got: &Value, want: &Value) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            let scale = a.abs().max(b.abs());
            assert!((a - b).abs() <= REL_TOL * scale, "{path}: {a:e} != {b:e}");
        }
        (Value::Object(a), Value::Object(b)) => {
            let ka: Vec<_> = a.keys().collect();
            let kb: Vec<_> = b.keys().collect();
            assert_eq!(ka, kb, "{path}: keys differ");
            for (k, v) in a {
                assert_close(&format!("{path}.{k}"), v, &b[k]);
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: lengths differ");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_close(&format!("{path}[{i}]"), x, y);
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn assert_tables_close(name: &str, got: &Table, want: &Table) {
    assert_eq!((&got.columns, &got.units, &got.meta), (&want.columns, &want.units, &want.meta), "{name}: header");
    assert_eq!(got.rows.len(), want.rows.len(), "{name}: row count");
    for (i, (a, b)) in got.rows.iter().zip(&want.rows).enumerate() {
        for (x, y) in a.iter().zip(b) {
            let same = (x.is_nan() && y.is_nan()) || (x - y).abs() <= REL_TOL * x.abs().max(y.abs());
            assert!(same, "{name} row {i}: {x:e} != {y:e}");
        }
    }
}

/// Runs the binary with `args` (where `{dir}` stands for the input
/// directory), then checks the report and every named output file.
fn golden(name: &str, args: &[&str], outputs: &[&str]) {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_inputs(dir);
    let dir_str = dir.display().to_string();
    let args: Vec<String> = args.iter().map(|a| a.replace("{dir}", &dir_str)).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_mimcool")).args(&args).output().unwrap();
    assert!(out.status.success(), "{name}: exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap().replace(&dir_str, "{dir}");
    let got: Value = serde_json::from_str(&stdout).unwrap();

    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let report_path = golden_dir().join(format!("{name}.json"));
    if update {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&report_path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_close(name, &got, &want);

    for file in outputs {
        let path = golden_dir().join(format!("{name}.{file}"));
        let produced = std::fs::read_to_string(dir.join(file)).unwrap();
        if update {
            std::fs::write(&path, &produced).unwrap();
        }
        let got = Table::parse(&produced, file).unwrap();
        let want = Table::read(&path).unwrap();
        assert_tables_close(&format!("{name}.{file}"), &got, &want);
    }
}

#[test]
fn report() {
    golden("report", &["report"], &[]);
}

#[test]
fn limits() {
    golden("limits", &["limits"], &[]);
}

#[test]
fn loop_at_optimum() {
    golden("loop", &["loop", "--output", "{dir}/loop.csv"], &["loop.csv"]);
}

#[test]
fn loop_at_fixed_gain() {
    golden("loop-gain", &["loop", "--gain", "20"], &[]);
}

#[test]
fn sweep_gain_model() {
    golden("sweep-gain", &["sweep-gain", "--points", "31", "--output", "{dir}/sweep.csv"], &["sweep.csv"]);
}

#[test]
fn sweep_gain_simulated() {
    golden(
        "sweep-gain-simulated",
        &["sweep-gain", "--simulate", "--gains", "5,20,60", "--output", "{dir}/sweep.csv"],
        &["sweep.csv"],
    );
}

#[test]
fn simulate() {
    golden(
        "simulate",
        &["simulate", "--duration", "0.02", "--segment", "1024", "--seed", "3", "--output", "{dir}/sim.csv"],
        &["sim.csv"],
    );
}

#[test]
fn fit_lorentzian() {
    golden("fit-lorentzian", &["fit-lorentzian", "{dir}/lorentzian.csv"], &[]);
}

#[test]
fn fit_susceptibility() {
    golden("fit-susceptibility", &["fit-lorentzian", "--susceptibility", "{dir}/lorentzian.csv"], &[]);
}

#[test]
fn calibrate() {
    golden("calibrate", &["calibrate", "{dir}/anchor.csv", "--output", "{dir}/calibrated.csv"], &["calibrated.csv"]);
}

#[test]
fn fit_loop() {
    golden("fit-loop", &["fit-loop", "{dir}/inloop.csv", "--gain-guess", "25"], &[]);
}

#[test]
fn fit_dip() {
    golden("fit-dip", &["fit-dip", "{dir}/dip.csv", "--eta-r", "0.92"], &[]);
}

#[test]
fn fit_qp() {
    golden("fit-qp", &["fit-qp", "{dir}/qp.csv"], &[]);
}

#[test]
fn fit_heating() {
    golden("fit-heating", &["fit-heating", "{dir}/heating.csv", "--area0", "1", "--gamma0", "5"], &[]);
}

#[test]
fn cal_freqnoise() {
    golden(
        "cal-freqnoise",
        &[
            "cal-freqnoise",
            "{dir}/freqnoise.csv",
            "--ratio",
            "0.3",
            "--phi-mod",
            "0.05",
            "--mod-freq",
            "2.2e6",
            "--tone-half-width",
            "1500",
            "--output",
            "{dir}/displacement.csv",
        ],
        &["displacement.csv"],
    );
}

#[test]
fn tin() {
    golden("tin", &["tin", "--spectrum", "{dir}/detuning.csv", "--output", "{dir}/mixing.csv"], &["mixing.csv"]);
}

#[test]
fn backaction() {
    golden(
        "backaction",
        &[
            "backaction",
            "--spring",
            "{dir}/spring.csv",
            "--damping",
            "{dir}/damping.csv",
            "--coupled-fraction",
            "0.0094",
        ],
        &[],
    );
}

#[test]
fn text_format() {
    let out = Command::new(env!("CARGO_BIN_EXE_mimcool")).args(["--format", "text", "limits"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("limits.sideband_min_at_half_kappa = ") && l.ends_with(" quanta")));
}
