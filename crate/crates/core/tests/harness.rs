#![allow(clippy::field_reassign_with_default)]

use std::fs;
use std::path::Path;
use std::process::Command;

use maglink::harness::sim::OffsetSource;
use maglink::harness::{
    execute, read_log, run_recovery_demo, run_static_trial, write_log, LogRecord, ScenarioKind, TrialConfig,
};
use maglink::Error;
use proptest::prelude::*;

fn config(scenario: ScenarioKind, out: &Path) -> TrialConfig {
    let mut cfg = TrialConfig::for_scenario(scenario);
    cfg.output = out.to_path_buf();
    cfg
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn repeated_runs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let mut cfg = config(ScenarioKind::Human, dir);
        cfg.duration = Some(5.0);
        execute(&cfg).unwrap();
        let mut cfg = config(ScenarioKind::Static, dir);
        cfg.weights_kg = Some(vec![0.0, 0.8, 1.6]);
        execute(&cfg).unwrap();
    }
    for name in ["human_full.csv", "human_partial.csv", "static.csv", "summary.txt"] {
        assert!(bytes(a.path(), name) == bytes(b.path(), name), "{name} differs");
    }
}

#[test]
fn seed_changes_the_noise() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, seed) in [(a.path(), 1), (b.path(), 2)] {
        let mut cfg = config(ScenarioKind::Human, dir);
        cfg.duration = Some(1.0);
        cfg.seed = seed;
        execute(&cfg).unwrap();
    }
    assert!(bytes(a.path(), "human_full.csv") != bytes(b.path(), "human_full.csv"));
}

#[test]
fn static_trial_reports_settle_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ScenarioKind::Static, dir.path());
    cfg.weights_kg = Some(vec![0.5]);
    cfg.static_trial.ramp_time = 0.1;
    cfg.static_trial.max_time = 0.2;
    match run_static_trial(&cfg) {
        Err(Error::SettleTimeout { weight_kg, .. }) => assert_eq!(weight_kg, 0.5),
        other => panic!("expected a settle timeout, got {other:?}"),
    }
}

#[test]
fn static_weights_must_ascend() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ScenarioKind::Static, dir.path());
    cfg.weights_kg = Some(vec![1.0, 0.5]);
    assert!(run_static_trial(&cfg).is_err());
}

#[test]
fn zero_pulse_never_triggers_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ScenarioKind::Recovery, dir.path());
    cfg.perturbation.resist_force = 0.0;
    let rep = run_recovery_demo(&cfg).unwrap();
    assert_eq!(rep.with_recovery.activations, 0);
    assert!(!rep.with_recovery.ever_detached && !rep.without_recovery.ever_detached);
}

#[test]
fn estimate_driven_recovery_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(ScenarioKind::Recovery, dir.path());
    cfg.recovery.source = OffsetSource::Estimate;
    cfg.duration = Some(14.0);
    let rep = run_recovery_demo(&cfg).unwrap();
    assert_eq!(rep.with_recovery.run.steps(), 14_000);
    assert!(rep.without_recovery.ever_detached);
}

fn record(t: f64, x: f64, z2: Option<f64>, state: &str) -> LogRecord {
    LogRecord {
        t,
        x1: x,
        v1: -x,
        x2: x * 0.5,
        v2: 1e-17,
        z1: x + 1e-9,
        z2,
        xh1: x,
        vh1: 0.1,
        xh2: 0.3,
        vh2: -0.0,
        offset: x * 0.5,
        u: 40.0,
        recovery: 1,
        detach_state: state.to_string(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn log_survives_csv(xs in prop::collection::vec((0.0f64..0.6, prop::option::of(-1.0f64..1.0)), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let states = ["attached", "separating", "detached"];
        let records: Vec<LogRecord> = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, z2))| record(i as f64 * 1e-3, x, z2, states[i % 3]))
            .collect();
        write_log(&records, &path).unwrap();
        prop_assert_eq!(read_log(&path).unwrap(), records);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        dt in 1e-5f64..1e-2,
        qp in 1e-15f64..1e-6,
        weights in prop::collection::vec(0.0f64..3.0, 1..6),
        threshold in prop::option::of(1e-4f64..1e-2),
        window in 1usize..500,
    ) {
        let mut cfg = TrialConfig::default();
        cfg.seed = seed;
        cfg.dt = dt;
        cfg.noise.q_position = qp;
        cfg.weights_kg = Some(weights);
        cfg.recovery.offset_threshold = threshold;
        cfg.recovery.source = OffsetSource::Measured { window };
        let back = TrialConfig::parse(&cfg.to_text(), Path::new("generated.cfg")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

fn maglink(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_maglink")).args(args).output().unwrap()
}

#[test]
fn cli_runs_a_configured_static_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("trial.cfg");
    fs::write(&cfg, "# short sweep\ntrial.weights_kg = 0.0, 1.0, 1.6\n").unwrap();
    let out = dir.path().join("out");
    let res = maglink(&["static-trial", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("scenario: static"), "{stdout}");
    assert!(stdout.contains("detach_weight_kg: 1.600"), "{stdout}");
    assert_eq!(fs::read_to_string(out.join("summary.txt")).unwrap(), stdout);
}

#[test]
fn cli_rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 3\nphysics.mass_bottm_m1 = 0.5\n").unwrap();
    let res = maglink(&["human-trial", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("physics.mass_bottm_m1") && err.contains('2'), "{err}");
    assert!(!dir.path().join("summary.txt").exists());
}

#[test]
fn cli_rejects_bad_mode() {
    let res = maglink(&["human-trial", "--mode", "sideways"]);
    assert!(!res.status.success());
}

#[test]
fn cli_calibrate_writes_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let res = maglink(&["calibrate", "--out", dir.path().to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let cfg = maglink::harness::load_config(&dir.path().join("calibrated.cfg")).unwrap();
    assert!(!cfg.calibration.auto);
    assert!((cfg.physics.coupling_kd - 52482.68).abs() < 1.0, "{}", cfg.physics.coupling_kd);
}
