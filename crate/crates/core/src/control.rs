//! Motion reference, inner velocity loop, offset recovery and detachment monitoring.

use crate::error::{Error, Result};
use crate::physics::{self, ForcePeak, PhysicalParams};
use crate::plant::PlantState;

/// Published (RPM, m/s) pairs of the belt drive. The 20 RPM / 3.5 cm/s pair
/// implies a different belt ratio than the rest and is left out.
pub const RPM_SPEED_PAIRS: [(f64, f64); 4] = [(10.0, 0.0146), (15.0, 0.022), (25.0, 0.037), (30.0, 0.043)];

/// Belt constant from a least-squares fit through the origin, m/s per RPM.
pub fn belt_constant() -> f64 {
    let (num, den) = RPM_SPEED_PAIRS
        .iter()
        .fold((0.0, 0.0), |(n, d), &(rpm, v)| (n + rpm * v, d + rpm * rpm));
    num / den
}

pub fn rpm_to_speed(rpm: f64) -> f64 {
    belt_constant() * rpm
}

/// Back-and-forth trapezoidal motion over `[start, start + span]`.
///
/// Each out-and-back cycle runs at one entry of `speeds_rpm`, cycling through
/// the list, with a dwell after every stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProfile {
    pub start: f64,
    pub span: f64,
    pub speeds_rpm: Vec<f64>,
    /// Ramp acceleration, m/s².
    pub accel: f64,
    pub dwell: f64,
    /// Number of full passes through `speeds_rpm`; `None` repeats forever.
    pub repetitions: Option<usize>,
}

impl TrajectoryProfile {
    pub fn validate(&self, track_length: f64) -> Result<()> {
        if self.speeds_rpm.is_empty() || self.speeds_rpm.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("profile.speeds_rpm", "speeds must be > 0 and non-empty"));
        }
        if !(self.span > 0.0) || self.start < 0.0 || self.start + self.span > track_length + 1e-12 {
            return Err(Error::invalid(
                "profile.span",
                format!("[{}, {}] must lie within the {} m track", self.start, self.start + self.span, track_length),
            ));
        }
        if !(self.accel > 0.0) || !(self.dwell >= 0.0) {
            return Err(Error::invalid("profile.accel", "accel must be > 0 and dwell >= 0"));
        }
        Ok(())
    }

    fn stroke_time(&self, speed: f64) -> f64 {
        let ramp = speed * speed / self.accel;
        if self.span >= ramp {
            self.span / speed + speed / self.accel
        } else {
            2.0 * (self.span / self.accel).sqrt()
        }
    }

    fn cycle_time(&self, speed: f64) -> f64 {
        2.0 * (self.stroke_time(speed) + self.dwell)
    }

    /// Duration of one pass through every speed.
    pub fn period(&self) -> f64 {
        self.speeds_rpm.iter().map(|&r| self.cycle_time(rpm_to_speed(r))).sum()
    }

    /// Distance covered by one full period, m.
    pub fn path_per_period(&self) -> f64 {
        2.0 * self.span * self.speeds_rpm.len() as f64
    }

    /// Target (position, velocity) at time `t`.
    pub fn commanded_motion(&self, t: f64) -> (f64, f64) {
        let t = t.max(0.0);
        let period = self.period();
        if let Some(reps) = self.repetitions {
            if t >= reps as f64 * period {
                return (self.start, 0.0);
            }
        }
        let mut local = t % period;
        for &rpm in &self.speeds_rpm {
            let speed = rpm_to_speed(rpm);
            let cycle = self.cycle_time(speed);
            if local >= cycle {
                local -= cycle;
                continue;
            }
            let stroke = self.stroke_time(speed);
            let half = stroke + self.dwell;
            let (outbound, tau) = if local < half { (true, local) } else { (false, local - half) };
            if tau >= stroke {
                let pos = if outbound { self.start + self.span } else { self.start };
                return (pos, 0.0);
            }
            let (s, v) = self.stroke_progress(speed, tau);
            return if outbound {
                (self.start + s, v)
            } else {
                (self.start + self.span - s, -v)
            };
        }
        (self.start, 0.0)
    }

    /// Distance and speed `tau` seconds into a single stroke.
    fn stroke_progress(&self, speed: f64, tau: f64) -> (f64, f64) {
        let a = self.accel;
        let stroke = self.stroke_time(speed);
        let peak = if self.span >= speed * speed / a { speed } else { (self.span * a).sqrt() };
        let ramp = peak / a;
        if tau < ramp {
            (0.5 * a * tau * tau, a * tau)
        } else if tau <= stroke - ramp {
            (0.5 * a * ramp * ramp + peak * (tau - ramp), peak)
        } else {
            let rem = (stroke - tau).max(0.0);
            (self.span - 0.5 * a * rem * rem, a * rem)
        }
    }
}

/// Saturated proportional velocity loop producing the motor force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorLoop {
    /// N per (m/s).
    pub gain: f64,
    pub max_force: f64,
}

impl Default for MotorLoop {
    fn default() -> Self {
        Self { gain: 400.0, max_force: 40.0 }
    }
}

impl MotorLoop {
    pub fn force(&self, target_velocity: f64, state: &PlantState) -> f64 {
        motor_force(target_velocity, state, self.gain, self.max_force)
    }
}

/// u = clamp(gain·(v_target − v1), ±u_max).
pub fn motor_force(target_velocity: f64, state: &PlantState, gain: f64, max_force: f64) -> f64 {
    (gain * (target_velocity - state.v1)).clamp(-max_force, max_force)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub offset_threshold: f64,
    /// (m/s) per m of offset beyond the threshold.
    pub proportional_gain: f64,
    pub max_recovery_speed: f64,
}

impl RecoveryConfig {
    /// Threshold at half the restoring-force peak offset.
    pub fn from_params(params: &PhysicalParams) -> Self {
        Self {
            offset_threshold: 0.5 * physics::restoring_peak(params).offset,
            proportional_gain: 2.0,
            max_recovery_speed: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset_threshold > 0.0) || !(self.proportional_gain > 0.0) || !(self.max_recovery_speed > 0.0) {
            return Err(Error::invalid("recovery", format!("threshold, gain and cap must be > 0: {self:?}")));
        }
        Ok(())
    }

    pub fn engaged(&self, offset: f64) -> bool {
        offset.abs() > self.offset_threshold
    }
}

/// Adjusts the commanded driver velocity from the estimated offset (x1 − x2).
///
/// Inside the threshold band the command passes through. Beyond it the
/// correction `gain·excess` (capped) always moves the driver toward the
/// follower: a lagging follower makes the driver reverse, a leading one makes
/// it speed up in the travel direction.
pub fn offset_recovery(offset: f64, commanded_velocity: f64, rc: &RecoveryConfig) -> f64 {
    let excess = offset.abs() - rc.offset_threshold;
    if excess <= 0.0 {
        return commanded_velocity;
    }
    let correction = (rc.proportional_gain * excess).min(rc.max_recovery_speed);
    let toward_follower = -offset.signum();
    if commanded_velocity == 0.0 {
        return toward_follower * correction;
    }
    let travel = commanded_velocity.signum();
    if toward_follower == travel {
        // follower ahead
        commanded_velocity + travel * correction
    } else {
        toward_follower * correction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetachState {
    Attached,
    Separating,
    Detached,
}

impl DetachState {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetachState::Attached => "attached",
            DetachState::Separating => "separating",
            DetachState::Detached => "detached",
        }
    }
}

impl std::str::FromStr for DetachState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attached" => Ok(DetachState::Attached),
            "separating" => Ok(DetachState::Separating),
            "detached" => Ok(DetachState::Detached),
            other => Err(Error::Log(format!("unknown detach state `{other}`"))),
        }
    }
}

/// Classifies an offset against a precomputed restoring-force peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetachmentMonitor {
    pub peak: ForcePeak,
}

impl DetachmentMonitor {
    pub fn new(params: &PhysicalParams) -> Self {
        Self { peak: physics::restoring_peak(params) }
    }

    pub fn classify(&self, offset: f64) -> DetachState {
        let ratio = offset.abs() / self.peak.offset;
        if ratio < 0.8 {
            DetachState::Attached
        } else if ratio <= 1.0 {
            DetachState::Separating
        } else {
            DetachState::Detached
        }
    }
}

pub fn detachment_check(offset: f64, params: &PhysicalParams) -> DetachState {
    DetachmentMonitor::new(params).classify(offset)
}
