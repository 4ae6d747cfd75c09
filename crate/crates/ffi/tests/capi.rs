use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use maglink_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ml_last_error()) }.to_string_lossy().into_owned()
}

fn new_plant(x0: f64) -> *mut MlPlant {
    let mut plant = ptr::null_mut();
    assert_eq!(unsafe { ml_plant_new(0.0, x0, &mut plant) }, MlStatus::Ok);
    assert!(!plant.is_null());
    plant
}

#[test]
fn plant_handle_steps_and_reports_forces() {
    let plant = new_plant(0.3);
    let mut s = MlState::default();
    unsafe {
        assert_eq!(ml_plant_get_state(plant, &mut s), MlStatus::Ok);
        assert_eq!((s.x1, s.x2, s.t), (0.3, 0.3, 0.0));
        s.x1 = 0.302;
        assert_eq!(ml_plant_set_state(plant, &s), MlStatus::Ok);
        let (mut b, mut t) = (0.0, 0.0);
        assert_eq!(ml_plant_magnetic_forces(plant, &mut b, &mut t), MlStatus::Ok);
        assert_eq!(b + t, 0.0);
        assert!(t > 0.0, "follower pulled toward the driver");
        for _ in 0..100 {
            assert_eq!(ml_plant_step(plant, 0.0, 1e-3), MlStatus::Ok);
        }
        assert_eq!(ml_plant_get_state(plant, &mut s), MlStatus::Ok);
        assert!((s.t - 0.1).abs() < 1e-12);
        assert!(s.x2 > 0.3);
        ml_plant_free(plant);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let plant = new_plant(0.3);
    unsafe {
        assert_eq!(ml_plant_step(plant, 0.0, -1.0), MlStatus::InvalidArgument);
        assert!(last_error().contains("dt"), "{}", last_error());
        assert_eq!(ml_plant_step(ptr::null_mut(), 0.0, 1e-3), MlStatus::NullPointer);
        assert_eq!(last_error(), "plant is null");
        let mut other = ptr::null_mut();
        assert_eq!(ml_plant_new(0.0, 2.0, &mut other), MlStatus::InvalidArgument);
        assert!(other.is_null());
        let bad = MlState { x1: f64::NAN, ..MlState::default() };
        assert_eq!(ml_plant_set_state(plant, &bad), MlStatus::InvalidArgument);
        ml_plant_free(plant);
        ml_plant_free(ptr::null_mut());
    }
}

#[test]
fn ekf_handle_tracks_the_plant() {
    let plant = new_plant(0.3);
    let r = [1e-9, 9e-6];
    let mut ekf = ptr::null_mut();
    unsafe {
        assert_eq!(ml_ekf_new(plant, 1e-12, 1e-4, r.as_ptr(), 2, 1e-8, 1e-6, &mut ekf), MlStatus::Ok);
        let mut truth = MlState::default();
        for k in 0..500 {
            let u = if k < 250 { 5.0 } else { -5.0 };
            assert_eq!(ml_plant_step(plant, u, 1e-3), MlStatus::Ok);
            ml_plant_get_state(plant, &mut truth);
            assert_eq!(ml_ekf_predict(ekf, u, 1e-3), MlStatus::Ok);
            let z = [truth.x1, truth.x2];
            assert_eq!(ml_ekf_update(ekf, z.as_ptr(), 2), MlStatus::Ok);
        }
        let mut est = MlState::default();
        assert_eq!(ml_ekf_estimate(ekf, &mut est), MlStatus::Ok);
        assert!((est.x1 - truth.x1).abs() < 1e-6 && (est.x2 - truth.x2).abs() < 1e-6);
        assert!((est.t - truth.t).abs() < 1e-12);

        let mut p = [0.0; 16];
        assert_eq!(ml_ekf_covariance(ekf, p.as_mut_ptr()), MlStatus::Ok);
        for i in 0..4 {
            assert!(p[5 * i] > 0.0);
            for j in 0..4 {
                assert_eq!(p[4 * i + j], p[4 * j + i]);
            }
        }
        let z = [0.3];
        assert_eq!(ml_ekf_update(ekf, z.as_ptr(), 1), MlStatus::InvalidArgument);
        assert!(last_error().contains("dimension"), "{}", last_error());
        assert_eq!(ml_ekf_update(ekf, z.as_ptr(), 3), MlStatus::InvalidArgument);
        ml_ekf_free(ekf);
        ml_plant_free(plant);
    }
}

#[test]
fn rmse_over_the_boundary() {
    let (a, b) = ([0.0, 0.0], [1.0, 3f64.sqrt()]);
    let mut out = 0.0;
    assert_eq!(unsafe { ml_rmse(a.as_ptr(), b.as_ptr(), 2, &mut out) }, MlStatus::Ok);
    assert!((out - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { ml_rmse(a.as_ptr(), b.as_ptr(), 0, &mut out) }, MlStatus::InvalidArgument);
}

#[test]
fn scenario_runner_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("trial.cfg");
    std::fs::write(&cfg, "trial.weights_kg = 0.0, 1.6\n").unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let scenario = CString::new("static").unwrap();
    let cfg_c = CString::new(cfg.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ml_run_scenario(scenario.as_ptr(), cfg_c.as_ptr(), out.as_ptr()) }, MlStatus::Ok);
    assert!(dir.path().join("out/static.csv").exists());

    let bad = CString::new("sprint").unwrap();
    assert_eq!(unsafe { ml_run_scenario(bad.as_ptr(), ptr::null(), out.as_ptr()) }, MlStatus::InvalidArgument);
    assert!(last_error().contains("sprint"));

    std::fs::write(&cfg, "no_such.key = 1\n").unwrap();
    assert_eq!(unsafe { ml_run_scenario(scenario.as_ptr(), cfg_c.as_ptr(), out.as_ptr()) }, MlStatus::Config);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ml_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/maglink.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ml_plant_new", "ml_ekf_update", "ml_run_scenario", "ML_STATUS_OK", "typedef struct MlPlant MlPlant"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ MlPlant *p = 0; MlStatus s = ml_plant_new(0.0, 0.3, &p); \
             ml_plant_free(p); return (int)s; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(res) => assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr)),
        Err(e) => eprintln!("no C compiler available, skipping syntax check: {e}"),
    }
}
