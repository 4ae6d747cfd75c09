//! C ABI over the maglink plant, estimator and scenario runner.
//!
//! Handles are opaque and owned by the caller: every `*_new` has a matching
//! `*_free`. Functions return an [`MlStatus`]; on failure a description is
//! kept per thread and can be read with [`ml_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use maglink::estimator::{Ekf, NoiseConfig};
use maglink::harness::config::calibrate_kd;
use maglink::harness::{execute, execute_calibration, load_config, ScenarioKind};
use maglink::physics::PhysicalParams;
use maglink::plant::{Disturbance, Plant, PlantState};
use maglink::sensing::{Measurement, ObservabilityMode};
use maglink::Error;
use nalgebra::{DVector, Matrix4, Vector4};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IntegrationBlowup = 3,
    EstimatorFailure = 4,
    Config = 5,
    Io = 6,
    Panic = 7,
}

/// Plant state: positions in m, velocities in m/s, time in s.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MlState {
    pub x1: f64,
    pub v1: f64,
    pub x2: f64,
    pub v2: f64,
    pub t: f64,
}

impl From<PlantState> for MlState {
    fn from(s: PlantState) -> Self {
        Self { x1: s.x1, v1: s.v1, x2: s.x2, v2: s.v2, t: s.t }
    }
}

impl From<MlState> for PlantState {
    fn from(s: MlState) -> Self {
        Self { x1: s.x1, v1: s.v1, x2: s.x2, v2: s.v2, t: s.t }
    }
}

/// Simulated magnet pair with its current state.
pub struct MlPlant {
    plant: Plant,
    state: PlantState,
}

/// Extended Kalman filter bound to a copy of a plant model.
pub struct MlEkf {
    ekf: Ekf,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> MlStatus {
    match err {
        Error::IntegrationBlowup { .. } => MlStatus::IntegrationBlowup,
        Error::EstimatorDivergence { .. } | Error::SingularInnovation { .. } => MlStatus::EstimatorFailure,
        Error::Config { .. } | Error::UnknownKey { .. } => MlStatus::Config,
        Error::Io { .. } | Error::Log(_) => MlStatus::Io,
        _ => MlStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MlStatus::Panic
        }
    }
}

fn fail(e: Error) -> (MlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MlStatus, String) {
    (MlStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn ml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a plant. A `coupling_kd` ≤ 0 selects the constant calibrated so
/// the pair detaches at 1.45 kg. The pair starts at rest at `x0` (m).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_new(coupling_kd: f64, x0: f64, out: *mut *mut MlPlant) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = if coupling_kd > 0.0 {
            PhysicalParams { coupling_kd, ..PhysicalParams::default() }
        } else {
            calibrate_kd(&PhysicalParams::default(), 1.45).map_err(fail)?
        };
        params.validate().map_err(fail)?;
        if !(0.0..=maglink::plant::TRACK_LENGTH).contains(&x0) {
            return Err((MlStatus::InvalidArgument, format!("x0 = {x0} is off the track")));
        }
        let handle = Box::new(MlPlant { plant: Plant::new(params), state: PlantState::at_rest(x0) });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `plant` must be null or a handle from [`ml_plant_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_free(plant: *mut MlPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// # Safety
/// `plant` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_get_state(plant: *const MlPlant, out: *mut MlState) -> MlStatus {
    guard(|| {
        let p = plant.as_ref().ok_or_else(|| null("plant"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = p.state.into();
        Ok(())
    })
}

/// # Safety
/// `plant` must be a live handle and `state` readable.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_set_state(plant: *mut MlPlant, state: *const MlState) -> MlStatus {
    guard(|| {
        let p = plant.as_mut().ok_or_else(|| null("plant"))?;
        let s: PlantState = (*state.as_ref().ok_or_else(|| null("state"))?).into();
        if !s.is_finite() {
            return Err((MlStatus::InvalidArgument, "state has non-finite entries".into()));
        }
        p.state = s;
        Ok(())
    })
}

/// Advances the plant by `dt` seconds under motor force `u` (N).
///
/// # Safety
/// `plant` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_step(plant: *mut MlPlant, u: f64, dt: f64) -> MlStatus {
    guard(|| {
        let p = plant.as_mut().ok_or_else(|| null("plant"))?;
        p.state = p.plant.step(&p.state, u, dt, &Disturbance::none()).map_err(fail)?;
        Ok(())
    })
}

/// Magnetic force on the (bottom, top) magnet at the current state, N.
///
/// # Safety
/// `plant` must be a live handle; `bottom` and `top` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_plant_magnetic_forces(plant: *const MlPlant, bottom: *mut f64, top: *mut f64) -> MlStatus {
    guard(|| {
        let p = plant.as_ref().ok_or_else(|| null("plant"))?;
        let (b, t) = maglink::physics::magnetic_force_pair(p.state.x1, p.state.x2, &p.plant.params);
        *bottom.as_mut().ok_or_else(|| null("bottom"))? = b;
        *top.as_mut().ok_or_else(|| null("top"))? = t;
        Ok(())
    })
}

/// Creates a filter for `plant`'s model, initialized at its current state.
/// `r_len` selects the mode: 1 (encoder only) or 2 (encoder and laser);
/// `r` holds the measurement variances in m².
///
/// # Safety
/// `plant` must be a live handle, `r` must point to `r_len` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_new(
    plant: *const MlPlant,
    q_position: f64,
    q_velocity: f64,
    r: *const f64,
    r_len: usize,
    p0_position: f64,
    p0_velocity: f64,
    out: *mut *mut MlEkf,
) -> MlStatus {
    guard(|| {
        let p = plant.as_ref().ok_or_else(|| null("plant"))?;
        if r.is_null() {
            return Err(null("r"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !(1..=2).contains(&r_len) {
            return Err((MlStatus::InvalidArgument, format!("r_len must be 1 or 2, got {r_len}")));
        }
        let r = std::slice::from_raw_parts(r, r_len);
        let p0 = Matrix4::from_diagonal(&Vector4::new(p0_position, p0_velocity, p0_position, p0_velocity));
        let noise = NoiseConfig::diagonal(q_position, q_velocity, r, p0, p.state.to_vector());
        let ekf = Ekf::new(p.plant, noise, p.state.t).map_err(fail)?;
        *out = Box::into_raw(Box::new(MlEkf { ekf }));
        Ok(())
    })
}

/// # Safety
/// `ekf` must be null or a handle from [`ml_ekf_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_free(ekf: *mut MlEkf) {
    if !ekf.is_null() {
        drop(Box::from_raw(ekf));
    }
}

/// # Safety
/// `ekf` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_predict(ekf: *mut MlEkf, u: f64, dt: f64) -> MlStatus {
    guard(|| {
        let e = ekf.as_mut().ok_or_else(|| null("ekf"))?;
        e.ekf.predict(u, dt).map_err(fail)
    })
}

/// Fuses `z_len` position readings (encoder first, then laser), m.
///
/// # Safety
/// `ekf` must be a live handle and `z` must point to `z_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_update(ekf: *mut MlEkf, z: *const f64, z_len: usize) -> MlStatus {
    guard(|| {
        let e = ekf.as_mut().ok_or_else(|| null("ekf"))?;
        if z.is_null() {
            return Err(null("z"));
        }
        let mode = match z_len {
            1 => ObservabilityMode::Partial,
            2 => ObservabilityMode::Full,
            n => return Err((MlStatus::InvalidArgument, format!("z_len must be 1 or 2, got {n}"))),
        };
        let z = DVector::from_row_slice(std::slice::from_raw_parts(z, z_len));
        let t = e.ekf.state().t;
        e.ekf.update(&Measurement { z, mode, t }).map_err(fail)
    })
}

/// # Safety
/// `ekf` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_estimate(ekf: *const MlEkf, out: *mut MlState) -> MlStatus {
    guard(|| {
        let e = ekf.as_ref().ok_or_else(|| null("ekf"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = e.ekf.state().as_plant_state().into();
        Ok(())
    })
}

/// Copies the 4×4 covariance into `out` in row-major order.
///
/// # Safety
/// `ekf` must be a live handle and `out` must have room for 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn ml_ekf_covariance(ekf: *const MlEkf, out: *mut f64) -> MlStatus {
    guard(|| {
        let e = ekf.as_ref().ok_or_else(|| null("ekf"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = &e.ekf.state().p;
        let dst = std::slice::from_raw_parts_mut(out, 16);
        for i in 0..4 {
            for j in 0..4 {
                dst[4 * i + j] = p[(i, j)];
            }
        }
        Ok(())
    })
}

/// Root-mean-square difference of two series of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_rmse(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> MlStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("series"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
        *out = maglink::estimator::rmse(a, b).map_err(fail)?;
        Ok(())
    })
}

fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (MlStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|_| (MlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Runs a scenario (`static`, `dynamic`, `human`, `recovery`, `tune` or
/// `calibrate`) and writes its files under `out_dir`. `config_path` may be
/// null for the defaults.
///
/// # Safety
/// Non-null string arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ml_run_scenario(
    scenario: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
) -> MlStatus {
    guard(|| {
        let name = c_str(scenario, "scenario")?;
        let mut cfg = if config_path.is_null() {
            Default::default()
        } else {
            load_config(Path::new(c_str(config_path, "config_path")?)).map_err(fail)?
        };
        cfg.output = c_str(out_dir, "out_dir")?.into();
        if name == "calibrate" {
            execute_calibration(&cfg).map_err(fail)?;
        } else {
            cfg.scenario = name.parse::<ScenarioKind>().map_err(|e| (MlStatus::InvalidArgument, e))?;
            execute(&cfg).map_err(fail)?;
        }
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
