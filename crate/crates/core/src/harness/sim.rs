//! Closed loop: reference → velocity servo → plant → sensors → EKF(s) → recovery.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::{self, DetachState, DetachmentMonitor, MotorLoop, RecoveryConfig, TrajectoryProfile};
use crate::error::{Error, Result};
use crate::estimator::{CovarianceHealth, Ekf, LoggedTrial, NoiseConfig};
use crate::plant::{Disturbance, Plant, PlantState};
use crate::sensing::{self, Measurement, ObservabilityMode, SensorParams, Sensors};

use super::log::LogRecord;

#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub plant: Plant,
    pub dt: f64,
    pub duration: f64,
    pub motor: MotorLoop,
    /// Outer position correction on the commanded velocity, 1/s.
    pub position_gain: f64,
    pub profile: TrajectoryProfile,
    pub sensors: SensorParams,
    pub disturbance: Disturbance,
    pub recovery: Option<RecoveryConfig>,
    /// Which offset signal the recovery law acts on.
    pub recovery_source: OffsetSource,
    pub estimators: Vec<NoiseConfig>,
    /// Unmodeled force from the participant's hand on the follower.
    pub hand_force: Option<OuForce>,
    /// Unmodeled belt/motor force ripple on the driver.
    pub drive_ripple: Option<OuForce>,
    /// Seed of the hand/ripple stream (independent of the sensor noise).
    pub force_seed: u64,
}

/// Offset signal fed to the recovery law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetSource {
    /// x̂1 − x̂2 from the first estimator.
    Estimate,
    /// Mean of the last `window` measured gaps, encoder minus laser. Inactive
    /// until the window has filled.
    Measured { window: usize },
}

/// Stationary Ornstein–Uhlenbeck force with standard deviation `sigma` and
/// correlation time `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuForce {
    pub sigma: f64,
    pub tau: f64,
}

impl OuForce {
    fn advance(&self, value: f64, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
        let a = (-dt / self.tau).exp();
        let xi: f64 = StandardNormal.sample(rng);
        a * value + self.sigma * (1.0 - a * a).sqrt() * xi
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoopOutput {
    pub dt: f64,
    /// `truth[0]` is the initial state; `truth[k + 1]` follows step k.
    pub truth: Vec<PlantState>,
    pub inputs: Vec<f64>,
    pub measurements: Vec<Measurement>,
    /// Per estimator, the estimate after each step.
    pub estimates: Vec<Vec<Vector4<f64>>>,
    pub modes: Vec<ObservabilityMode>,
    pub recovery: Vec<bool>,
    pub detach: Vec<DetachState>,
    pub impulses: usize,
    pub health: CovarianceHealth,
}

impl LoopOutput {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn logged_trial(&self) -> LoggedTrial {
        LoggedTrial {
            dt: self.dt,
            truth: self.truth.clone(),
            inputs: self.inputs.clone(),
            measurements: self.measurements.clone(),
        }
    }

    pub fn max_abs_offset(&self) -> f64 {
        self.truth.iter().map(|s| s.offset().abs()).fold(0.0, f64::max)
    }

    /// Path length travelled by the driver, m.
    pub fn driver_path(&self) -> f64 {
        self.truth.windows(2).map(|w| (w[1].x1 - w[0].x1).abs()).sum()
    }

    pub fn ever_detached(&self) -> bool {
        self.detach.contains(&DetachState::Detached)
    }

    /// Log rows using the estimates of estimator `which` (zeros when absent).
    pub fn records(&self, which: Option<usize>) -> Vec<LogRecord> {
        (0..self.steps())
            .map(|k| {
                let s = &self.truth[k + 1];
                let m = &self.measurements[k];
                let xh = which.map_or(Vector4::zeros(), |i| self.estimates[i][k]);
                LogRecord {
                    t: s.t,
                    x1: s.x1,
                    v1: s.v1,
                    x2: s.x2,
                    v2: s.v2,
                    z1: m.z[0],
                    z2: if m.z.len() > 1 { Some(m.z[1]) } else { None },
                    xh1: xh[0],
                    vh1: xh[1],
                    xh2: xh[2],
                    vh2: xh[3],
                    offset: s.offset(),
                    u: self.inputs[k],
                    recovery: u8::from(self.recovery[k]),
                    detach_state: self.detach[k].as_str().to_string(),
                }
            })
            .collect()
    }
}

pub fn run_loop(setup: &LoopSetup) -> Result<LoopOutput> {
    if !(setup.dt > 0.0) || !(setup.duration > 0.0) {
        return Err(Error::invalid("dt", "dt and duration must be > 0"));
    }
    let plant = setup.plant;
    let dt = setup.dt;
    let steps = (setup.duration / dt).round() as usize;
    let mut sensors = Sensors::new(setup.sensors.clone())?;
    let monitor = DetachmentMonitor::new(&plant.params);

    let (x_start, _) = setup.profile.commanded_motion(0.0);
    let mut state = PlantState::at_rest(x_start);
    let mut filters = setup
        .estimators
        .iter()
        .map(|n| Ekf::new(plant, NoiseConfig { x0: state.to_vector(), ..n.clone() }, 0.0))
        .collect::<Result<Vec<_>>>()?;

    let mut out = LoopOutput {
        dt,
        truth: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps),
        measurements: Vec::with_capacity(steps),
        estimates: vec![Vec::with_capacity(steps); filters.len()],
        modes: filters.iter().map(|f| f.mode()).collect(),
        recovery: Vec::with_capacity(steps),
        detach: Vec::with_capacity(steps),
        ..LoopOutput::default()
    };
    out.truth.push(state);

    let mut measured_x1 = sensors.encoder_read(&state);
    let mut bump = 0.0;
    let mut force_rng = ChaCha8Rng::seed_from_u64(setup.force_seed);
    let (mut hand, mut ripple) = (0.0, 0.0);
    let mut gap_window = std::collections::VecDeque::new();
    let mut gap_sum = 0.0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (x_ref, v_ref) = setup.profile.commanded_motion(t);
        let mut v_cmd = v_ref + setup.position_gain * (x_ref - measured_x1);
        let mut engaged = false;
        if let Some(rc) = &setup.recovery {
            let offset = match setup.recovery_source {
                OffsetSource::Estimate => filters.first().map(|f| f.state().x_hat[0] - f.state().x_hat[2]),
                OffsetSource::Measured { window } if gap_window.len() >= window.max(1) => {
                    Some(gap_sum / gap_window.len() as f64)
                }
                OffsetSource::Measured { .. } => None,
            };
            if let Some(offset) = offset {
                engaged = rc.engaged(offset);
                v_cmd = control::offset_recovery(offset, v_cmd, rc);
            }
        }
        let u = setup.motor.force(v_cmd, &state);

        if let Some(ou) = &setup.hand_force {
            hand = ou.advance(hand, dt, &mut force_rng);
        }
        if let Some(ou) = &setup.drive_ripple {
            ripple = ou.advance(ripple, dt, &mut force_rng);
        }
        let next = plant.step_ext(&state, u + bump + ripple, hand, dt, &setup.disturbance)?;
        bump = match sensing::interrupter_disturbance(&state, &next, &setup.sensors, dt) {
            Some(ev) => {
                out.impulses += ev.crossings;
                ev.force
            }
            None => 0.0,
        };
        state = next;

        let z = sensors.measure(&state, ObservabilityMode::Full);
        measured_x1 = z.z[0];
        if let OffsetSource::Measured { window } = setup.recovery_source {
            let gap = z.z[0] - z.z[1];
            gap_window.push_back(gap);
            gap_sum += gap;
            if gap_window.len() > window.max(1) {
                gap_sum -= gap_window.pop_front().unwrap_or(0.0);
            }
        }
        for (i, f) in filters.iter_mut().enumerate() {
            f.predict(u, dt)?;
            let zi = match f.mode() {
                ObservabilityMode::Full => z.clone(),
                ObservabilityMode::Partial => z.to_partial(),
            };
            f.update(&zi)?;
            out.estimates[i].push(f.state().x_hat);
        }
        out.truth.push(state);
        out.inputs.push(u);
        out.measurements.push(z);
        out.recovery.push(engaged);
        out.detach.push(monitor.classify(state.offset()));
    }
    for f in &filters {
        out.health.merge(f.health());
    }
    Ok(out)
}
