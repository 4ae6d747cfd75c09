//! The experiment scenarios: static pull, dynamic sweep, human trial,
//! recovery demo, offline tuning and calibration.

use nalgebra::Matrix4;
use serde::Serialize;

use crate::control::{rpm_to_speed, DetachState, DetachmentMonitor, TrajectoryProfile};
use crate::error::{Error, Result};
use crate::estimator::{rmse, tune_offline, NoiseConfig, TuningGrid};
use crate::physics::{restoring_peak, PhysicalParams, GRAVITY};
use crate::plant::{Disturbance, DisturbanceEntry, PlantState};
use crate::sensing::ObservabilityMode;

use super::config::{calibrate_kd, TrialConfig};
use super::sim::{run_loop, LoopOutput, LoopSetup, OffsetSource};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticRow {
    pub weight_kg: f64,
    /// Final x1 − x2, m.
    pub offset: f64,
    pub state: String,
    /// Simulated time until rest or detachment, s.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticReport {
    pub rows: Vec<StaticRow>,
    /// First weight in the sweep that detached.
    pub detach_weight: Option<f64>,
    pub peak_offset: f64,
    pub peak_force: f64,
}

impl StaticReport {
    pub fn state_at(&self, weight_kg: f64) -> Option<DetachState> {
        self.rows
            .iter()
            .find(|r| (r.weight_kg - weight_kg).abs() < 1e-9)
            .and_then(|r| r.state.parse().ok())
    }
}

/// Bottom magnet locked; each weight pulls the follower with a lateral
/// force ramped up to weight·g, held until the follower comes to rest or
/// passes the force peak.
pub fn run_static_trial(cfg: &TrialConfig) -> Result<StaticReport> {
    cfg.validate()?;
    let params = cfg.calibrated_params()?;
    let plant = cfg.plant()?.locked();
    let peak = restoring_peak(&params);
    let monitor = DetachmentMonitor::new(&params);
    let st = &cfg.static_trial;
    let max_steps = (st.max_time / cfg.dt).ceil() as usize;
    let rest_steps = (st.rest_time / cfg.dt).ceil() as usize;
    let x0 = 0.5 * cfg.track_length;

    let mut rows = Vec::new();
    let mut detach_weight = None;
    let weights = cfg.effective_weights();
    if weights.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::invalid("trial.weights_kg", "static sweep must be ascending"));
    }
    let none = Disturbance::none();
    for w in weights {
        // Hung gradually: the pull ramps up from zero instead of jumping.
        let pull = |t: f64| -w * GRAVITY * (t / st.ramp_time).min(1.0);
        let ramp_steps = (st.ramp_time / cfg.dt).ceil() as usize;
        let mut state = PlantState::at_rest(x0);
        let mut still = 0;
        let mut outcome = None;
        for k in 1..=max_steps {
            let f = pull(state.t);
            state = plant.step_ext(&state, 0.0, f, cfg.dt, &none)?;
            if state.offset().abs() > peak.offset {
                outcome = Some((DetachState::Detached, k));
                break;
            }
            still = if state.v2.abs() < st.rest_speed && k >= ramp_steps { still + 1 } else { 0 };
            if still >= rest_steps {
                outcome = Some((monitor.classify(state.offset()), k));
                break;
            }
        }
        let Some((class, k)) = outcome else {
            return Err(Error::SettleTimeout { weight_kg: w, seconds: st.max_time });
        };
        if class == DetachState::Detached && detach_weight.is_none() {
            detach_weight = Some(w);
        }
        rows.push(StaticRow {
            weight_kg: w,
            offset: state.offset(),
            state: class.as_str().to_string(),
            time: k as f64 * cfg.dt,
        });
    }
    Ok(StaticReport { rows, detach_weight, peak_offset: peak.offset, peak_force: peak.force })
}

#[derive(Debug, Clone)]
pub struct DynamicCell {
    pub speed_rpm: f64,
    pub weight_kg: f64,
    pub peak_offset: f64,
    pub detached: bool,
    pub run: LoopOutput,
}

#[derive(Debug, Clone)]
pub struct DynamicReport {
    /// Speed-major, weight-minor, in config order.
    pub cells: Vec<DynamicCell>,
}

impl DynamicReport {
    pub fn cell(&self, speed_rpm: f64, weight_kg: f64) -> Option<&DynamicCell> {
        self.cells
            .iter()
            .find(|c| (c.speed_rpm - speed_rpm).abs() < 1e-9 && (c.weight_kg - weight_kg).abs() < 1e-9)
    }

    pub fn max_cell(&self) -> Option<&DynamicCell> {
        self.cells.iter().fold(None, |best: Option<&DynamicCell>, c| match best {
            Some(b) if b.peak_offset >= c.peak_offset => Some(b),
            _ => Some(c),
        })
    }
}

/// One 0.60 m stroke per (speed, weight), the weight riding on the follower.
pub fn run_dynamic_trial(cfg: &TrialConfig) -> Result<DynamicReport> {
    cfg.validate()?;
    let plant = cfg.plant()?;
    let d = &cfg.dynamic;
    let mut cells = Vec::new();
    for &rpm in &cfg.speeds_rpm {
        let speed = rpm_to_speed(rpm);
        let profile = TrajectoryProfile {
            start: d.start,
            span: d.span,
            speeds_rpm: vec![rpm],
            accel: speed / d.ramp_time,
            dwell: d.settle,
            repetitions: Some(1),
        };
        let stroke = d.span / speed + d.ramp_time;
        for w in cfg.effective_weights() {
            let setup = LoopSetup {
                plant,
                dt: cfg.dt,
                duration: stroke + d.settle,
                motor: cfg.motor,
                position_gain: cfg.position_gain,
                profile: profile.clone(),
                sensors: cfg.sensor_params(),
                disturbance: Disturbance::constant(0.0, 0.0, w)?,
                recovery: None,
                recovery_source: OffsetSource::Estimate,
                estimators: Vec::new(),
                hand_force: None,
                drive_ripple: None,
                force_seed: cfg.force_seed(),
            };
            let run = run_loop(&setup)?;
            cells.push(DynamicCell {
                speed_rpm: rpm,
                weight_kg: w,
                peak_offset: run.max_abs_offset(),
                detached: run.ever_detached(),
                run,
            });
        }
    }
    Ok(DynamicReport { cells })
}

/// Position RMSE of one estimator, cm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    pub mode: ObservabilityMode,
    pub bottom_cm: f64,
    pub top_cm: f64,
}

#[derive(Debug, Clone)]
pub struct HumanReport {
    pub run: LoopOutput,
    pub rmse: Vec<RmseRow>,
    pub path_length: f64,
    pub max_offset: f64,
}

impl HumanReport {
    pub fn rmse_for(&self, mode: ObservabilityMode) -> Option<RmseRow> {
        self.rmse.iter().copied().find(|r| r.mode == mode)
    }
}

fn human_setup(cfg: &TrialConfig, duration: f64, estimators: Vec<NoiseConfig>) -> Result<LoopSetup> {
    Ok(LoopSetup {
        plant: cfg.plant()?,
        dt: cfg.dt,
        duration,
        motor: cfg.motor,
        position_gain: cfg.position_gain,
        profile: cfg.profile.clone(),
        sensors: cfg.sensor_params(),
        disturbance: Disturbance::none(),
        recovery: None,
        recovery_source: cfg.recovery.source,
        estimators,
        hand_force: cfg.human.hand(),
        drive_ripple: cfg.human.ripple(),
        force_seed: cfg.force_seed(),
    })
}

/// Per-estimator position RMSE against ground truth, cm.
pub fn rmse_table(run: &LoopOutput) -> Result<Vec<RmseRow>> {
    let t1: Vec<f64> = run.truth[1..].iter().map(|s| s.x1).collect();
    let t2: Vec<f64> = run.truth[1..].iter().map(|s| s.x2).collect();
    run.modes
        .iter()
        .zip(&run.estimates)
        .map(|(&mode, est)| {
            let e1: Vec<f64> = est.iter().map(|x| x[0]).collect();
            let e2: Vec<f64> = est.iter().map(|x| x[2]).collect();
            Ok(RmseRow { mode, bottom_cm: 100.0 * rmse(&e1, &t1)?, top_cm: 100.0 * rmse(&e2, &t2)? })
        })
        .collect()
}

/// Back-and-forth profile with every selected estimator fed the same
/// measurement stream. Offset recovery, when enabled, follows the first one.
pub fn run_human_trial(cfg: &TrialConfig) -> Result<HumanReport> {
    cfg.validate()?;
    let estimators = cfg.mode.modes().into_iter().map(|m| cfg.noise_config(m)).collect();
    let mut setup = human_setup(cfg, cfg.effective_duration(), estimators)?;
    if cfg.recovery.enabled {
        setup.recovery = Some(cfg.recovery_config(&setup.plant.params));
    }
    let run = run_loop(&setup)?;
    Ok(HumanReport {
        rmse: rmse_table(&run)?,
        path_length: run.driver_path(),
        max_offset: run.max_abs_offset(),
        run,
    })
}

#[derive(Debug, Clone)]
pub struct RecoveryRun {
    pub run: LoopOutput,
    pub max_offset: f64,
    pub final_state: DetachState,
    pub ever_detached: bool,
    pub activations: usize,
    /// Seconds after the pulse ends until |offset| is back under the
    /// threshold for good; `None` if it never is.
    pub settle_after_pulse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub threshold: f64,
    pub peak_offset: f64,
    pub with_recovery: RecoveryRun,
    pub without_recovery: RecoveryRun,
}

fn summarize_recovery(run: LoopOutput, threshold: f64, pulse_end: f64) -> RecoveryRun {
    let above = run.truth[1..].iter().rposition(|s| s.offset().abs() > threshold);
    let settle_after_pulse = match above {
        None => Some(0.0),
        Some(k) if k + 2 == run.truth.len() => None,
        Some(k) => Some((run.truth[k + 2].t - pulse_end).max(0.0)),
    };
    RecoveryRun {
        max_offset: run.max_abs_offset(),
        final_state: run.detach.last().copied().unwrap_or(DetachState::Attached),
        ever_detached: run.ever_detached(),
        activations: run.recovery.iter().filter(|&&r| r).count(),
        settle_after_pulse,
        run,
    }
}

/// Human profile with a resistance pulse on the follower, run with the
/// offset recovery on and off.
pub fn run_recovery_demo(cfg: &TrialConfig) -> Result<RecoveryReport> {
    cfg.validate()?;
    let params = cfg.calibrated_params()?;
    let rc = cfg.recovery_config(&params);
    let p = &cfg.perturbation;
    let disturbance = if p.resist_force > 0.0 && p.duration > 0.0 {
        Disturbance::new(vec![DisturbanceEntry {
            start: p.start,
            duration: p.duration,
            resist_force: p.resist_force,
            rise_time: p.rise_time,
            ..DisturbanceEntry::default()
        }])?
    } else {
        Disturbance::none()
    };
    let pulse_end = p.start + p.duration;
    let mut setup = human_setup(cfg, cfg.effective_duration(), vec![cfg.noise_config(ObservabilityMode::Full)])?;
    setup.disturbance = disturbance;

    setup.recovery = Some(rc);
    let on = summarize_recovery(run_loop(&setup)?, rc.offset_threshold, pulse_end);
    setup.recovery = None;
    let off = summarize_recovery(run_loop(&setup)?, rc.offset_threshold, pulse_end);
    Ok(RecoveryReport {
        threshold: rc.offset_threshold,
        peak_offset: restoring_peak(&params).offset,
        with_recovery: on,
        without_recovery: off,
    })
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub tuned: TrialConfig,
    pub noise: NoiseConfig,
    pub score: f64,
    pub table: Vec<(f64, f64, f64, f64)>,
}

/// Grid search of Q and the R scale on a freshly simulated training trial.
/// The returned config carries the winner, with the final covariance's
/// diagonal as the new P0.
pub fn run_tune(cfg: &TrialConfig) -> Result<TuneReport> {
    cfg.validate()?;
    let training = run_loop(&human_setup(cfg, cfg.tune.duration, Vec::new())?)?;
    let grid = TuningGrid {
        q_position: cfg.tune.q_position.clone(),
        q_velocity: cfg.tune.q_velocity.clone(),
        r_scale: cfg.tune.r_scale.clone(),
        r_base: cfg.r_diagonal(),
        p0: cfg.p0(),
    };
    let plant = cfg.plant()?;
    let result = tune_offline(&[training.logged_trial()], &grid, &plant, cfg.tune.mode)?;
    let n = &result.noise;
    let mut tuned = cfg.clone();
    tuned.noise.q_position = n.q[(0, 0)];
    tuned.noise.q_velocity = n.q[(1, 1)];
    tuned.noise.r_encoder = Some(n.r[(0, 0)]);
    if n.r.nrows() > 1 {
        tuned.noise.r_laser = Some(n.r[(1, 1)]);
    }
    let diag = |p: &Matrix4<f64>, i: usize, j: usize| p[(i, i)].max(p[(j, j)]);
    tuned.noise.p0_position = diag(&n.p0, 0, 2);
    tuned.noise.p0_velocity = diag(&n.p0, 1, 3);
    Ok(TuneReport { tuned, noise: result.noise, score: result.score, table: result.table })
}

/// Config with `coupling_Kd` calibrated to the target detach weight and
/// auto-calibration switched off.
pub fn run_calibration(cfg: &TrialConfig) -> Result<(TrialConfig, PhysicalParams)> {
    cfg.validate()?;
    let params = calibrate_kd(&cfg.physics, cfg.calibration.target_detach_kg)?;
    let mut out = cfg.clone();
    out.physics = params;
    out.calibration.auto = false;
    Ok((out, params))
}
