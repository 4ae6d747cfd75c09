//! Flat `key = value` trial configuration.
//!
//! One assignment per line, `#` starts a comment, section names are dotted
//! prefixes (`physics.radius_R`). Lists are comma separated. Optional values
//! accept `auto`. Unknown keys are rejected with their line number.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};

use crate::control::{MotorLoop, RecoveryConfig, TrajectoryProfile};
use crate::error::{Error, Result};
use crate::estimator::{sensor_r, NoiseConfig};
use crate::physics::{self, PhysicalParams, GRAVITY};
use crate::plant::{Plant, TRACK_LENGTH};
use crate::sensing::{ObservabilityMode, SensorParams};

use super::sim::{OffsetSource, OuForce};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Static,
    Dynamic,
    Human,
    Recovery,
    Tune,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Static => "static",
            ScenarioKind::Dynamic => "dynamic",
            ScenarioKind::Human => "human",
            ScenarioKind::Recovery => "recovery",
            ScenarioKind::Tune => "tune",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "static" => ScenarioKind::Static,
            "dynamic" => ScenarioKind::Dynamic,
            "human" => ScenarioKind::Human,
            "recovery" => ScenarioKind::Recovery,
            "tune" => ScenarioKind::Tune,
            other => return Err(format!("unknown scenario `{other}`")),
        })
    }
}

/// Which estimator modes a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelect {
    Full,
    Partial,
    Both,
}

impl ModeSelect {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeSelect::Full => "full",
            ModeSelect::Partial => "partial",
            ModeSelect::Both => "both",
        }
    }

    pub fn modes(&self) -> Vec<ObservabilityMode> {
        match self {
            ModeSelect::Full => vec![ObservabilityMode::Full],
            ModeSelect::Partial => vec![ObservabilityMode::Partial],
            ModeSelect::Both => vec![ObservabilityMode::Full, ObservabilityMode::Partial],
        }
    }
}

impl FromStr for ModeSelect {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(ModeSelect::Full),
            "partial" => Ok(ModeSelect::Partial),
            "both" => Ok(ModeSelect::Both),
            other => Err(format!("expected full, partial or both, got `{other}`")),
        }
    }
}

/// Diagonal EKF noise settings. `None` variances come from the sensor model.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSettings {
    pub q_position: f64,
    pub q_velocity: f64,
    pub r_encoder: Option<f64>,
    pub r_laser: Option<f64>,
    pub p0_position: f64,
    pub p0_velocity: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            q_position: 1e-12,
            q_velocity: 1e-4,
            r_encoder: None,
            r_laser: None,
            p0_position: 1e-8,
            p0_velocity: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySettings {
    pub enabled: bool,
    /// `None` means half the restoring-force peak offset.
    pub offset_threshold: Option<f64>,
    pub gain: f64,
    pub max_speed: f64,
    pub source: OffsetSource,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self {
            enabled: true,
            offset_threshold: None,
            gain: 2.0,
            max_speed: 0.05,
            source: OffsetSource::Measured { window: 75 },
        }
    }
}

/// Resistance pulse of the recovery demo.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub start: f64,
    pub duration: f64,
    pub resist_force: f64,
    pub rise_time: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { start: 10.0, duration: 1.0, resist_force: 20.0, rise_time: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    /// Rescale `coupling_Kd` before every scenario.
    pub auto: bool,
    pub target_detach_kg: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { auto: true, target_detach_kg: 1.45 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticSettings {
    /// Longest simulated time per weight before giving up, s.
    pub max_time: f64,
    /// Follower speed below which the system counts as at rest, m/s.
    pub rest_speed: f64,
    /// How long it must stay at rest, s.
    pub rest_time: f64,
    /// Time over which the pull rises to its full value, s.
    pub ramp_time: f64,
}

impl Default for StaticSettings {
    fn default() -> Self {
        Self { max_time: 30.0, rest_speed: 1e-6, rest_time: 0.5, ramp_time: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSettings {
    pub start: f64,
    pub span: f64,
    /// Time to reach cruise speed, s.
    pub ramp_time: f64,
    /// Extra simulated time after the stroke ends, s.
    pub settle: f64,
}

impl Default for DynamicSettings {
    fn default() -> Self {
        Self { start: 0.0, span: TRACK_LENGTH, ramp_time: 0.05, settle: 1.0 }
    }
}

/// Unmodeled forces of the human-in-the-loop runs.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanSettings {
    pub hand_sigma: f64,
    pub hand_tau: f64,
    pub ripple_sigma: f64,
    pub ripple_tau: f64,
}

impl Default for HumanSettings {
    fn default() -> Self {
        Self { hand_sigma: 1.0, hand_tau: 1.0, ripple_sigma: 0.5, ripple_tau: 0.3 }
    }
}

impl HumanSettings {
    pub fn hand(&self) -> Option<OuForce> {
        (self.hand_sigma > 0.0).then_some(OuForce { sigma: self.hand_sigma, tau: self.hand_tau })
    }

    pub fn ripple(&self) -> Option<OuForce> {
        (self.ripple_sigma > 0.0).then_some(OuForce { sigma: self.ripple_sigma, tau: self.ripple_tau })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSettings {
    pub q_position: Vec<f64>,
    pub q_velocity: Vec<f64>,
    pub r_scale: Vec<f64>,
    /// Length of the training trial, s.
    pub duration: f64,
    pub mode: ObservabilityMode,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            q_position: vec![1e-13, 1e-12, 1e-11],
            q_velocity: vec![1e-5, 1e-4, 1e-3],
            r_scale: vec![0.5, 1.0, 2.0],
            duration: 30.0,
            mode: ObservabilityMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// `None` picks the scenario default.
    pub duration: Option<f64>,
    pub dt: f64,
    pub mode: ModeSelect,
    pub output: PathBuf,
    pub physics: PhysicalParams,
    pub track_length: f64,
    /// Sensor model; its RNG seed is taken from `seed`.
    pub sensing: SensorParams,
    pub noise: NoiseSettings,
    pub motor: MotorLoop,
    pub position_gain: f64,
    pub profile: TrajectoryProfile,
    pub recovery: RecoverySettings,
    /// `None` picks the scenario default sweep.
    pub weights_kg: Option<Vec<f64>>,
    pub speeds_rpm: Vec<f64>,
    pub perturbation: Perturbation,
    pub calibration: CalibrationSettings,
    pub static_trial: StaticSettings,
    pub dynamic: DynamicSettings,
    pub human: HumanSettings,
    pub tune: TuneSettings,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Human,
            seed: 7,
            duration: None,
            dt: 1e-3,
            mode: ModeSelect::Both,
            output: PathBuf::from("out"),
            physics: PhysicalParams::default(),
            track_length: TRACK_LENGTH,
            sensing: SensorParams::default(),
            noise: NoiseSettings::default(),
            motor: MotorLoop::default(),
            position_gain: 2.0,
            profile: TrajectoryProfile {
                start: 0.1,
                span: 0.3,
                speeds_rpm: vec![15.0, 25.0],
                accel: 0.1,
                dwell: 1.0,
                repetitions: None,
            },
            recovery: RecoverySettings::default(),
            weights_kg: None,
            speeds_rpm: vec![10.0, 20.0, 30.0],
            perturbation: Perturbation::default(),
            calibration: CalibrationSettings::default(),
            static_trial: StaticSettings::default(),
            dynamic: DynamicSettings::default(),
            human: HumanSettings::default(),
            tune: TuneSettings::default(),
        }
    }
}

impl TrialConfig {
    pub fn for_scenario(scenario: ScenarioKind) -> Self {
        Self { scenario, ..Self::default() }
    }

    pub fn effective_duration(&self) -> f64 {
        self.duration.unwrap_or(match self.scenario {
            ScenarioKind::Human => 240.0,
            ScenarioKind::Recovery => 30.0,
            ScenarioKind::Tune => self.tune.duration,
            ScenarioKind::Static => self.static_trial.max_time,
            ScenarioKind::Dynamic => 0.0,
        })
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        match &self.weights_kg {
            Some(w) => w.clone(),
            None if self.scenario == ScenarioKind::Static => (0..=20).map(|i| i as f64 / 10.0).collect(),
            None => vec![0.0, 0.2, 0.5, 1.0, 1.5],
        }
    }

    pub fn sensor_params(&self) -> SensorParams {
        SensorParams { rng_seed: self.seed, ..self.sensing.clone() }
    }

    /// Seed of the hand/ripple force stream, decorrelated from the sensors.
    pub fn force_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }

    /// Physical parameters after optional auto-calibration.
    pub fn calibrated_params(&self) -> Result<PhysicalParams> {
        if self.calibration.auto {
            calibrate_kd(&self.physics, self.calibration.target_detach_kg)
        } else {
            Ok(self.physics)
        }
    }

    pub fn plant(&self) -> Result<Plant> {
        let mut plant = Plant::new(self.calibrated_params()?);
        plant.track_length = self.track_length;
        Ok(plant)
    }

    pub fn recovery_config(&self, params: &PhysicalParams) -> RecoveryConfig {
        let base = RecoveryConfig::from_params(params);
        RecoveryConfig {
            offset_threshold: self.recovery.offset_threshold.unwrap_or(base.offset_threshold),
            proportional_gain: self.recovery.gain,
            max_recovery_speed: self.recovery.max_speed,
        }
    }

    /// Diagonal (encoder, laser) measurement variances.
    pub fn r_diagonal(&self) -> [f64; 2] {
        let r = sensor_r(self.sensing.encoder_resolution, self.sensing.laser_noise_sigma);
        [self.noise.r_encoder.unwrap_or(r[(0, 0)]), self.noise.r_laser.unwrap_or(r[(1, 1)])]
    }

    pub fn p0(&self) -> Matrix4<f64> {
        let (p, v) = (self.noise.p0_position, self.noise.p0_velocity);
        Matrix4::from_diagonal(&Vector4::new(p, v, p, v))
    }

    pub fn noise_config(&self, mode: ObservabilityMode) -> NoiseConfig {
        let r = self.r_diagonal();
        NoiseConfig::diagonal(
            self.noise.q_position,
            self.noise.q_velocity,
            &r[..mode.dim()],
            self.p0(),
            Vector4::zeros(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid("duration", format!("must be > 0, got {d}")));
            }
        }
        if let Some(w) = &self.weights_kg {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::invalid("trial.weights_kg", "weights must be >= 0"));
            }
        }
        if self.speeds_rpm.is_empty() || self.speeds_rpm.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("trial.speeds_rpm", "speeds must be > 0 and non-empty"));
        }
        if !(self.track_length > 0.0) {
            return Err(Error::invalid("plant.track_length", "must be > 0"));
        }
        self.physics.validate()?;
        self.sensing.validate()?;
        self.profile.validate(self.track_length)?;
        if !(self.motor.gain > 0.0) || !(self.motor.max_force > 0.0) {
            return Err(Error::invalid("motor", "gain and max_force must be > 0"));
        }
        let n = &self.noise;
        let variances = [Some(n.q_position), Some(n.q_velocity), n.r_encoder, n.r_laser, Some(n.p0_position), Some(n.p0_velocity)];
        if variances.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise", "variances must be finite and >= 0"));
        }
        RecoveryConfig {
            offset_threshold: self.recovery.offset_threshold.unwrap_or(1.0),
            proportional_gain: self.recovery.gain,
            max_recovery_speed: self.recovery.max_speed,
        }
        .validate()?;
        let p = &self.perturbation;
        if !(p.start >= 0.0 && p.duration >= 0.0 && p.resist_force >= 0.0 && p.rise_time >= 0.0) {
            return Err(Error::invalid("perturbation", "start, duration, resist_force and rise_time must be >= 0"));
        }
        if !(self.calibration.target_detach_kg > 0.0) {
            return Err(Error::invalid("calibration.target_detach_kg", "must be > 0"));
        }
        let s = &self.static_trial;
        if !(s.max_time > s.ramp_time && s.rest_speed > 0.0 && s.rest_time > 0.0 && s.ramp_time > 0.0) {
            return Err(Error::invalid("static", "rest_speed, rest_time, ramp_time must be > 0 and max_time > ramp_time"));
        }
        let d = &self.dynamic;
        if !(d.span > 0.0 && d.start >= 0.0 && d.start + d.span <= self.track_length + 1e-12) {
            return Err(Error::invalid("dynamic.span", "stroke must lie within the track"));
        }
        if !(d.ramp_time > 0.0 && d.settle >= 0.0) {
            return Err(Error::invalid("dynamic.ramp_time", "ramp_time must be > 0 and settle >= 0"));
        }
        let h = &self.human;
        if !(h.hand_sigma >= 0.0 && h.ripple_sigma >= 0.0 && h.hand_tau > 0.0 && h.ripple_tau > 0.0) {
            return Err(Error::invalid("human", "sigmas must be >= 0 and taus > 0"));
        }
        let t = &self.tune;
        let lists = [&t.q_position, &t.q_velocity, &t.r_scale];
        if lists.iter().any(|l| l.is_empty() || l.iter().any(|&v| !(v >= 0.0 && v.is_finite()))) {
            return Err(Error::invalid("tune", "grid lists must be non-empty and >= 0"));
        }
        if !(t.duration > 0.0) {
            return Err(Error::invalid("tune.duration", "must be > 0"));
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.physics;
        let s = &self.sensing;
        let n = &self.noise;
        let pr = &self.profile;
        let r = &self.recovery;
        let st = &self.static_trial;
        let d = &self.dynamic;
        let h = &self.human;
        let t = &self.tune;
        vec![
            ("scenario", self.scenario.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("duration", opt(self.duration)),
            ("dt", self.dt.to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("output", self.output.display().to_string()),
            ("physics.mu0", p.mu0.to_string()),
            ("physics.magnetization_M", p.magnetization_m.to_string()),
            ("physics.coupling_Kd", p.coupling_kd.to_string()),
            ("physics.radius_R", p.radius.to_string()),
            ("physics.height_h", p.height.to_string()),
            ("physics.separation_d", p.separation.to_string()),
            ("physics.mass_bottom_m1", p.mass_bottom.to_string()),
            ("physics.mass_top_m2", p.mass_top.to_string()),
            ("physics.fric_coulomb_Fc", p.fric_coulomb.to_string()),
            ("physics.fric_static_Fs", p.fric_static.to_string()),
            ("physics.stribeck_vel_vs", p.stribeck_velocity.to_string()),
            ("physics.fric_viscous_Kv_top", p.viscous_top.to_string()),
            ("physics.fric_viscous_Kv_bottom", p.viscous_bottom.to_string()),
            ("physics.sgn_smoothing_eps", p.sgn_smoothing_eps.to_string()),
            ("plant.track_length", self.track_length.to_string()),
            ("sensing.encoder_resolution", s.encoder_resolution.to_string()),
            ("sensing.laser_noise_sigma", s.laser_noise_sigma.to_string()),
            ("sensing.laser_bias", s.laser_bias.to_string()),
            ("sensing.interrupter_positions", list(&s.interrupter_positions)),
            ("sensing.interrupter_impulse", s.interrupter_impulse.to_string()),
            ("noise.q_position", n.q_position.to_string()),
            ("noise.q_velocity", n.q_velocity.to_string()),
            ("noise.r_encoder", opt(n.r_encoder)),
            ("noise.r_laser", opt(n.r_laser)),
            ("noise.p0_position", n.p0_position.to_string()),
            ("noise.p0_velocity", n.p0_velocity.to_string()),
            ("motor.gain", self.motor.gain.to_string()),
            ("motor.max_force", self.motor.max_force.to_string()),
            ("motor.position_gain", self.position_gain.to_string()),
            ("profile.start", pr.start.to_string()),
            ("profile.span", pr.span.to_string()),
            ("profile.speeds_rpm", list(&pr.speeds_rpm)),
            ("profile.accel", pr.accel.to_string()),
            ("profile.dwell", pr.dwell.to_string()),
            ("recovery.enabled", r.enabled.to_string()),
            ("recovery.offset_threshold", opt(r.offset_threshold)),
            ("recovery.gain", r.gain.to_string()),
            ("recovery.max_speed", r.max_speed.to_string()),
            ("recovery.source", source_str(r.source)),
            ("trial.weights_kg", self.weights_kg.as_ref().map_or("auto".into(), |w| list(w))),
            ("trial.speeds_rpm", list(&self.speeds_rpm)),
            ("perturbation.start", self.perturbation.start.to_string()),
            ("perturbation.duration", self.perturbation.duration.to_string()),
            ("perturbation.resist_force", self.perturbation.resist_force.to_string()),
            ("perturbation.rise_time", self.perturbation.rise_time.to_string()),
            ("calibration.auto", self.calibration.auto.to_string()),
            ("calibration.target_detach_kg", self.calibration.target_detach_kg.to_string()),
            ("static.max_time", st.max_time.to_string()),
            ("static.rest_speed", st.rest_speed.to_string()),
            ("static.rest_time", st.rest_time.to_string()),
            ("static.ramp_time", st.ramp_time.to_string()),
            ("dynamic.start", d.start.to_string()),
            ("dynamic.span", d.span.to_string()),
            ("dynamic.ramp_time", d.ramp_time.to_string()),
            ("dynamic.settle", d.settle.to_string()),
            ("human.hand_sigma", h.hand_sigma.to_string()),
            ("human.hand_tau", h.hand_tau.to_string()),
            ("human.ripple_sigma", h.ripple_sigma.to_string()),
            ("human.ripple_tau", h.ripple_tau.to_string()),
            ("tune.q_position", list(&t.q_position)),
            ("tune.q_velocity", list(&t.q_velocity)),
            ("tune.r_scale", list(&t.r_scale)),
            ("tune.duration", t.duration.to_string()),
            ("tune.mode", t.mode.as_str().to_string()),
        ]
    }

    /// Assigns one key. The error is a message without location.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), SetError> {
        let p = &mut self.physics;
        match key {
            "scenario" => self.scenario = value.parse().map_err(SetError::Value)?,
            "seed" => self.seed = value.parse().map_err(|e| SetError::Value(format!("{e}")))?,
            "duration" => self.duration = parse_opt(value)?,
            "dt" => self.dt = num(value)?,
            "mode" => self.mode = value.parse().map_err(SetError::Value)?,
            "output" => self.output = PathBuf::from(value),
            "physics.mu0" => p.mu0 = num(value)?,
            "physics.magnetization_M" => p.magnetization_m = num(value)?,
            "physics.coupling_Kd" => p.coupling_kd = num(value)?,
            "physics.radius_R" => p.radius = num(value)?,
            "physics.height_h" => p.height = num(value)?,
            "physics.separation_d" => p.separation = num(value)?,
            "physics.mass_bottom_m1" => p.mass_bottom = num(value)?,
            "physics.mass_top_m2" => p.mass_top = num(value)?,
            "physics.fric_coulomb_Fc" => p.fric_coulomb = num(value)?,
            "physics.fric_static_Fs" => p.fric_static = num(value)?,
            "physics.stribeck_vel_vs" => p.stribeck_velocity = num(value)?,
            "physics.fric_viscous_Kv_top" => p.viscous_top = num(value)?,
            "physics.fric_viscous_Kv_bottom" => p.viscous_bottom = num(value)?,
            "physics.sgn_smoothing_eps" => p.sgn_smoothing_eps = num(value)?,
            "plant.track_length" => self.track_length = num(value)?,
            "sensing.encoder_resolution" => self.sensing.encoder_resolution = num(value)?,
            "sensing.laser_noise_sigma" => self.sensing.laser_noise_sigma = num(value)?,
            "sensing.laser_bias" => self.sensing.laser_bias = num(value)?,
            "sensing.interrupter_positions" => self.sensing.interrupter_positions = parse_list(value)?,
            "sensing.interrupter_impulse" => self.sensing.interrupter_impulse = num(value)?,
            "noise.q_position" => self.noise.q_position = num(value)?,
            "noise.q_velocity" => self.noise.q_velocity = num(value)?,
            "noise.r_encoder" => self.noise.r_encoder = parse_opt(value)?,
            "noise.r_laser" => self.noise.r_laser = parse_opt(value)?,
            "noise.p0_position" => self.noise.p0_position = num(value)?,
            "noise.p0_velocity" => self.noise.p0_velocity = num(value)?,
            "motor.gain" => self.motor.gain = num(value)?,
            "motor.max_force" => self.motor.max_force = num(value)?,
            "motor.position_gain" => self.position_gain = num(value)?,
            "profile.start" => self.profile.start = num(value)?,
            "profile.span" => self.profile.span = num(value)?,
            "profile.speeds_rpm" => self.profile.speeds_rpm = parse_list(value)?,
            "profile.accel" => self.profile.accel = num(value)?,
            "profile.dwell" => self.profile.dwell = num(value)?,
            "recovery.enabled" => self.recovery.enabled = boolean(value)?,
            "recovery.offset_threshold" => self.recovery.offset_threshold = parse_opt(value)?,
            "recovery.gain" => self.recovery.gain = num(value)?,
            "recovery.max_speed" => self.recovery.max_speed = num(value)?,
            "recovery.source" => self.recovery.source = parse_source(value)?,
            "trial.weights_kg" => {
                self.weights_kg = if value == "auto" { None } else { Some(parse_list(value)?) }
            }
            "trial.speeds_rpm" => self.speeds_rpm = parse_list(value)?,
            "perturbation.start" => self.perturbation.start = num(value)?,
            "perturbation.duration" => self.perturbation.duration = num(value)?,
            "perturbation.resist_force" => self.perturbation.resist_force = num(value)?,
            "perturbation.rise_time" => self.perturbation.rise_time = num(value)?,
            "calibration.auto" => self.calibration.auto = boolean(value)?,
            "calibration.target_detach_kg" => self.calibration.target_detach_kg = num(value)?,
            "static.max_time" => self.static_trial.max_time = num(value)?,
            "static.rest_speed" => self.static_trial.rest_speed = num(value)?,
            "static.rest_time" => self.static_trial.rest_time = num(value)?,
            "static.ramp_time" => self.static_trial.ramp_time = num(value)?,
            "dynamic.start" => self.dynamic.start = num(value)?,
            "dynamic.span" => self.dynamic.span = num(value)?,
            "dynamic.ramp_time" => self.dynamic.ramp_time = num(value)?,
            "dynamic.settle" => self.dynamic.settle = num(value)?,
            "human.hand_sigma" => self.human.hand_sigma = num(value)?,
            "human.hand_tau" => self.human.hand_tau = num(value)?,
            "human.ripple_sigma" => self.human.ripple_sigma = num(value)?,
            "human.ripple_tau" => self.human.ripple_tau = num(value)?,
            "tune.q_position" => self.tune.q_position = parse_list(value)?,
            "tune.q_velocity" => self.tune.q_velocity = parse_list(value)?,
            "tune.r_scale" => self.tune.r_scale = parse_list(value)?,
            "tune.duration" => self.tune.duration = num(value)?,
            "tune.mode" => self.tune.mode = value.parse().map_err(|e: Error| SetError::Value(e.to_string()))?,
            _ => return Err(SetError::UnknownKey),
        }
        Ok(())
    }

    /// Parses config text; `origin` labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    path: origin.display().to_string(),
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            match cfg.set(key, value) {
                Ok(()) => {}
                Err(SetError::UnknownKey) => {
                    return Err(Error::UnknownKey { path: origin.display().to_string(), line, key: key.to_string() })
                }
                Err(SetError::Value(message)) => {
                    return Err(Error::Config {
                        path: origin.display().to_string(),
                        line,
                        message: format!("`{key}`: {message}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for TrialConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut section = "";
        for (key, value) in self.entries() {
            let this = key.split_once('.').map_or("", |(s, _)| s);
            if this != section {
                writeln!(f)?;
                section = this;
            }
            writeln!(f, "{key} = {value}")?;
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<TrialConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrialConfig::parse(&text, path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetError {
    UnknownKey,
    Value(String),
}

fn num(s: &str) -> std::result::Result<f64, SetError> {
    let v: f64 = s.parse().map_err(|_| SetError::Value(format!("`{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SetError::Value(format!("`{s}` is not finite")))
    }
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, SetError> {
    if s == "auto" {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn boolean(s: &str) -> std::result::Result<bool, SetError> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(SetError::Value(format!("`{s}` is not a boolean"))),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, SetError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| num(x.trim())).collect()
}

/// `estimate` or `measured:<window>`.
fn parse_source(s: &str) -> std::result::Result<OffsetSource, SetError> {
    if s == "estimate" {
        return Ok(OffsetSource::Estimate);
    }
    match s.strip_prefix("measured:").map(|w| w.trim().parse::<usize>()) {
        Some(Ok(window)) if window > 0 => Ok(OffsetSource::Measured { window }),
        _ => Err(SetError::Value(format!("expected `estimate` or `measured:<samples>`, got `{s}`"))),
    }
}

fn source_str(s: OffsetSource) -> String {
    match s {
        OffsetSource::Estimate => "estimate".into(),
        OffsetSource::Measured { window } => format!("measured:{window}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("auto".into(), |x| x.to_string())
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Rescales `coupling_Kd` so the restoring-force peak equals the weight of
/// `target_kg`, by bisection on the scale factor.
///
/// At rest the smoothed friction vanishes, so a constant pull detaches the
/// follower exactly when it exceeds the peak coupling force.
pub fn calibrate_kd(params: &PhysicalParams, target_kg: f64) -> Result<PhysicalParams> {
    let target = target_kg * GRAVITY;
    if !(target > 0.0) {
        return Err(Error::invalid("calibration.target_detach_kg", "must be > 0"));
    }
    let base = if params.coupling_kd > 0.0 { params.coupling_kd } else { physics::default_kd(params.mu0, params.magnetization_m) };
    let peak_at = |kd: f64| physics::restoring_peak(&PhysicalParams { coupling_kd: kd, ..*params }).force;
    let (mut lo, mut hi) = (0.0, base);
    while peak_at(hi) < target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("calibration target is unreachable".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if peak_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(PhysicalParams { coupling_kd: 0.5 * (lo + hi), ..*params })
}
