//! Behaviour of the binary: exit codes, configuration echo and the shape
//! of the gain sweeps.

use std::process::{Command, Output};

use mimcool::csvio::Table;
use mimcool::{Config, Report};
use mimcool_core::feedback::instability_threshold;
use serde_json::Value;
use tempfile::TempDir;

const PAPER_CFG: &str = include_str!("../paper.cfg");

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimcool")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_cfg(dir: &TempDir, text: &str) -> String {
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn report_echoes_a_config_that_reads_back() {
    let out = run(&["report"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = Report::config_from_json(&stdout(&out)).unwrap();
    assert_eq!(cfg, Config::paper());

    let dir = TempDir::new().unwrap();
    let echoed = write_cfg(&dir, &cfg.to_string());
    let again = run(&["report", &echoed]);
    assert!(again.status.success());
    assert_eq!(Report::config_from_json(&stdout(&again)).unwrap(), cfg);
}

#[test]
fn units_in_the_file_do_not_change_the_run() {
    let dir = TempDir::new().unwrap();
    let text = PAPER_CFG
        .replace("omega_m = 1.3 MHz", "omega_m = 1300 kHz")
        .replace("m_eff = 200 pg", "m_eff = 2e-13 kg")
        .replace("power = 780 µW", "power = 0.78 mW");
    assert_ne!(text, PAPER_CFG);
    let a: Value = serde_json::from_str(&stdout(&run(&["report"]))).unwrap();
    let b: Value = serde_json::from_str(&stdout(&run(&["report", &write_cfg(&dir, &text)]))).unwrap();
    assert_close(&a["results"], &b["results"]);
}

fn assert_close(a: &Value, b: &Value) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()), "{x:e} != {y:e}");
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>());
            for (k, v) in x {
                assert_close(v, &y[k]);
            }
        }
        _ => assert_eq!(a, b),
    }
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for cmd in [
        "report",
        "limits",
        "loop",
        "sweep-gain",
        "simulate",
        "fit-lorentzian",
        "calibrate",
        "fit-loop",
        "fit-dip",
        "fit-qp",
        "fit-heating",
        "cal-freqnoise",
        "tin",
        "backaction",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["warp-drive"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = write_cfg(&dir, &PAPER_CFG.replace("omega_m = 1.3 MHz", "omega_m = -1 MHz"));
    let out = run(&["report", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("omega_m"), "{}", stderr(&out));

    let out = run(&["report", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(2));

    let typo = write_cfg(&dir, &PAPER_CFG.replace("kappa = 340 MHz", "kappa = 340 MHz/s"));
    assert_eq!(run(&["report", &typo]).status.code(), Some(2));
}

#[test]
fn gain_above_the_limit_exits_2() {
    let out = run(&["loop", "--gain", "1e9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gain_max"));
}

#[test]
fn unstable_loop_exits_3() {
    // anti-damping
    let out = run(&["loop", "--gain", "-5"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    // past the delayed filter resonance's onset, still below gain_max
    let out = run(&["loop", "--gain", "900"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("unstable"));
}

#[test]
fn model_sweep_falls_to_a_floor_then_rises_until_unstable() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = run(&["sweep-gain", "--points", "41", "--output", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let t = Table::read(&csv).unwrap();
    let (n, stable) = (t.column(1), t.column(2));

    let first_unstable = stable.iter().position(|&s| s == 0.0).unwrap_or(n.len());
    assert!(stable[first_unstable..].iter().all(|&s| s == 0.0));
    assert!(n[first_unstable..].iter().all(|v| v.is_nan()));
    let n = &n[..first_unstable];
    let k = (0..n.len()).min_by(|&a, &b| n[a].total_cmp(&n[b])).unwrap();
    assert!(k > 0 && k + 1 < n.len(), "minimum at the sweep edge");
    assert!(n[..=k].windows(2).all(|w| w[1] < w[0]));
    assert!(n[k..].windows(2).all(|w| w[1] > w[0]));

    let model = Config::paper().experiment().unwrap().loop_model().unwrap();
    let threshold = instability_threshold(&model).unwrap();
    let g = t.column(0);
    assert!(g[first_unstable - 1] < threshold && threshold <= g[first_unstable]);
}

#[test]
fn simulated_sweep_turns_around_and_tracks_the_model() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = run(&["sweep-gain", "--simulate", "--gains", "3,20,80", "--output", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let t = Table::read(&csv).unwrap();
    let (sim, model) = (t.column(1), t.column(2));
    assert!(sim[1] < sim[0] && sim[1] < sim[2], "{sim:?}");
    for (s, m) in sim.iter().zip(&model) {
        assert!((s / m - 1.0).abs() < 0.1, "{s} vs {m}");
    }
}

#[test]
fn text_format_lists_quantities() {
    let out = run(&["--format", "text", "limits"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.contains(" = ") && l.contains("quanta")));
    assert!(serde_json::from_str::<Value>(&text).is_err());
}
