//! Two-body driver/follower plant: forces, state derivative and fixed-step RK4.

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::physics::{self, PhysicalParams};

/// Positions and velocities of both magnets. `x1`/`v1` is the motor-driven
/// bottom magnet, `x2`/`v2` the follower on top.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub x1: f64,
    pub v1: f64,
    pub x2: f64,
    pub v2: f64,
    pub t: f64,
}

impl PlantState {
    pub fn at_rest(x: f64) -> Self {
        Self { x1: x, x2: x, ..Self::default() }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x1, self.v1, self.x2, self.v2)
    }

    pub fn from_vector(v: &Vector4<f64>, t: f64) -> Self {
        Self { x1: v[0], v1: v[1], x2: v[2], v2: v[3], t }
    }

    /// Signed offset x1 − x2.
    pub fn offset(&self) -> f64 {
        self.x1 - self.x2
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.v1.is_finite() && self.x2.is_finite() && self.v2.is_finite() && self.t.is_finite()
    }
}

/// One scheduled perturbation acting on the follower.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceEntry {
    pub start: f64,
    pub duration: f64,
    /// Magnitude of a force opposing the follower's motion, N.
    pub resist_force: f64,
    /// Time for the resistance to ramp linearly up to `resist_force`, s.
    pub rise_time: f64,
    /// Constant signed force along +x, N (e.g. a hanging calibration weight).
    pub pull_force: f64,
    /// Mass resting on the follower while active, kg. Adds inertia and
    /// raises dry friction in proportion to the normal load.
    pub load_mass: f64,
}

impl DisturbanceEntry {
    fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    fn resistance_at(&self, t: f64) -> f64 {
        if self.rise_time > 0.0 {
            self.resist_force * ((t - self.start) / self.rise_time).clamp(0.0, 1.0)
        } else {
            self.resist_force
        }
    }

    fn overlaps(&self, from: f64, to: f64) -> bool {
        self.start < to && self.start + self.duration > from
    }
}

/// Non-overlapping schedule of follower perturbations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Disturbance {
    entries: Vec<DisturbanceEntry>,
}

impl Disturbance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(mut entries: Vec<DisturbanceEntry>) -> Result<Self> {
        for e in &entries {
            let fields = [e.start, e.duration, e.resist_force, e.rise_time, e.pull_force, e.load_mass];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("disturbance", "non-finite schedule entry"));
            }
            if e.duration < 0.0 || e.resist_force < 0.0 || e.rise_time < 0.0 || e.load_mass < 0.0 {
                return Err(Error::invalid(
                    "disturbance",
                    format!("duration, resistance and load mass must be >= 0: {e:?}"),
                ));
            }
        }
        entries.sort_by(|a, b| a.start.total_cmp(&b.start));
        for pair in entries.windows(2) {
            if pair[0].start + pair[0].duration > pair[1].start {
                return Err(Error::invalid(
                    "disturbance",
                    format!("entries overlap at t = {}", pair[1].start),
                ));
            }
        }
        Ok(Self { entries })
    }

    /// A single perturbation active for the whole run.
    pub fn constant(resist_force: f64, pull_force: f64, load_mass: f64) -> Result<Self> {
        Self::new(vec![DisturbanceEntry {
            start: 0.0,
            duration: f64::MAX,
            resist_force,
            rise_time: 0.0,
            pull_force,
            load_mass,
        }])
    }

    pub fn entries(&self) -> &[DisturbanceEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn active_at(&self, t: f64) -> Option<&DisturbanceEntry> {
        self.entries.iter().find(|e| e.contains(t))
    }

    fn max_resist_in(&self, from: f64, to: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.overlaps(from, to))
            .fold(0.0, |r, e| r.max(e.resist_force))
    }
}

/// How many RK4 substeps each call to [`Plant::step`] uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Substeps {
    /// Chosen per step from the stiffest linearized rate so that `h·λ` stays
    /// inside the RK4 stability region.
    Auto,
    Fixed(usize),
}

/// Length of the slider track, m.
pub const TRACK_LENGTH: f64 = 0.60;

const RK4_STABLE_STEP: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub params: PhysicalParams,
    pub track_length: f64,
    /// Holds the driver still (static characterization).
    pub bottom_locked: bool,
    pub substeps: Substeps,
}

impl Plant {
    pub fn new(params: PhysicalParams) -> Self {
        Self { params, track_length: TRACK_LENGTH, bottom_locked: false, substeps: Substeps::Auto }
    }

    pub fn with_substeps(mut self, substeps: Substeps) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn locked(mut self) -> Self {
        self.bottom_locked = true;
        self
    }

    /// Net forces on (bottom, top), N.
    pub fn net_forces(&self, state: &PlantState, u: f64, dist: &Disturbance) -> (f64, f64) {
        self.net_forces_ext(state, u, 0.0, dist)
    }

    /// [`Plant::net_forces`] with an extra external force `f_top` on the follower.
    pub fn net_forces_ext(&self, state: &PlantState, u: f64, f_top: f64, dist: &Disturbance) -> (f64, f64) {
        let p = &self.params;
        let (mag_bottom, mag_top) = physics::magnetic_force_pair(state.x1, state.x2, p);
        let net1 = u + mag_bottom - physics::viscous_friction(state.v1, p);
        let mut net2 = mag_top - physics::stribeck_friction(state.v2, p) + f_top;
        if let Some(e) = dist.active_at(state.t) {
            net2 += e.pull_force - e.resistance_at(state.t) * physics::smooth_sgn(state.v2, p.sgn_smoothing_eps);
            if e.load_mass > 0.0 {
                // dry friction grows with the normal load
                let dry = physics::stribeck_friction(state.v2, p) - p.viscous_top * state.v2;
                net2 -= dry * e.load_mass / p.mass_top;
            }
        }
        (net1, net2)
    }

    /// Time derivative (ẋ1, v̇1, ẋ2, v̇2).
    pub fn derivatives(&self, state: &PlantState, u: f64, dist: &Disturbance) -> Vector4<f64> {
        self.derivatives_ext(state, u, 0.0, dist)
    }

    pub fn derivatives_ext(&self, state: &PlantState, u: f64, f_top: f64, dist: &Disturbance) -> Vector4<f64> {
        let (net1, net2) = self.net_forces_ext(state, u, f_top, dist);
        let load = dist.active_at(state.t).map_or(0.0, |e| e.load_mass);
        let m2 = self.params.mass_top + load;
        if self.bottom_locked {
            Vector4::new(0.0, 0.0, state.v2, net2 / m2)
        } else {
            Vector4::new(state.v1, net1 / self.params.mass_bottom, state.v2, net2 / m2)
        }
    }

    pub fn substep_count(&self, t: f64, dt: f64, dist: &Disturbance) -> usize {
        match self.substeps {
            Substeps::Fixed(n) => n.max(1),
            Substeps::Auto => {
                let p = &self.params;
                let resist = dist.max_resist_in(t, t + dt);
                // added load scales dry friction and mass alike, so the
                // friction rate is unchanged and the others only drop
                let m2 = p.mass_top;
                let top = ((p.fric_static + resist) / p.sgn_smoothing_eps + p.viscous_top) / m2;
                let bottom = p.viscous_bottom / p.mass_bottom;
                let k = physics::magnetic_stiffness(0.0, p).max(0.0);
                let inv_mass = if self.bottom_locked { 1.0 / m2 } else { 1.0 / p.mass_bottom + 1.0 / m2 };
                let coupling = (k * inv_mass).sqrt();
                let rate = top.max(bottom).max(coupling);
                ((dt * rate / RK4_STABLE_STEP).ceil() as usize).max(1)
            }
        }
    }

    /// Advances the state by `dt` with zero-order-hold input `u`, then clamps
    /// both bodies to the track (zeroing the velocity of a clamped body).
    pub fn step(&self, state: &PlantState, u: f64, dt: f64, dist: &Disturbance) -> Result<PlantState> {
        self.step_ext(state, u, 0.0, dt, dist)
    }

    /// [`Plant::step`] with an extra zero-order-hold force `f_top` on the follower.
    pub fn step_ext(&self, state: &PlantState, u: f64, f_top: f64, dt: f64, dist: &Disturbance) -> Result<PlantState> {
        let mut next = self.integrate(state, u, f_top, dt, dist)?;
        clamp_to_track(&mut next.x1, &mut next.v1, self.track_length);
        clamp_to_track(&mut next.x2, &mut next.v2, self.track_length);
        Ok(next)
    }

    /// [`Plant::step`] without the track limits.
    pub fn step_unclamped(&self, state: &PlantState, u: f64, dt: f64, dist: &Disturbance) -> Result<PlantState> {
        self.integrate(state, u, 0.0, dt, dist)
    }

    fn integrate(&self, state: &PlantState, u: f64, f_top: f64, dt: f64, dist: &Disturbance) -> Result<PlantState> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        let n = self.substep_count(state.t, dt, dist);
        let h = dt / n as f64;
        let mut x = state.to_vector();
        for i in 0..n {
            let t = state.t + i as f64 * h;
            x = self.rk4(&x, t, u, f_top, h, dist);
        }
        let next = PlantState::from_vector(&x, state.t + dt);
        if !next.is_finite() {
            return Err(Error::IntegrationBlowup { t: next.t, x1: next.x1, v1: next.v1, x2: next.x2, v2: next.v2 });
        }
        Ok(next)
    }

    fn rk4(&self, x: &Vector4<f64>, t: f64, u: f64, f_top: f64, h: f64, dist: &Disturbance) -> Vector4<f64> {
        let f = |y: &Vector4<f64>, at: f64| self.derivatives_ext(&PlantState::from_vector(y, at), u, f_top, dist);
        let k1 = f(x, t);
        let k2 = f(&(x + k1 * (0.5 * h)), t + 0.5 * h);
        let k3 = f(&(x + k2 * (0.5 * h)), t + 0.5 * h);
        let k4 = f(&(x + k3 * h), t + h);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }
}

fn clamp_to_track(x: &mut f64, v: &mut f64, length: f64) {
    if *x < 0.0 {
        *x = 0.0;
        *v = 0.0;
    } else if *x > length {
        *x = length;
        *v = 0.0;
    }
}
