//! Magnetostatic coupling force and friction laws.
//!
//! Everything here is a pure function of its inputs. Positions are along the
//! travel axis in metres; the lateral offset is `delta = p1 - p2` (driver minus
//! follower).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * PI;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mu0: f64,
    /// Magnetization, A/m.
    pub magnetization_m: f64,
    /// Magnetostatic energy-density constant, J/m³.
    pub coupling_kd: f64,
    pub radius: f64,
    pub height: f64,
    /// Vertical gap between the magnet faces (casing plus rings).
    pub separation: f64,
    /// Driver carriage mass, including reflected belt and rotor inertia.
    pub mass_bottom: f64,
    /// Follower mass, including armrest and hand load.
    pub mass_top: f64,
    pub fric_coulomb: f64,
    pub fric_static: f64,
    pub stribeck_velocity: f64,
    pub viscous_top: f64,
    pub viscous_bottom: f64,
    /// Width of the tanh used in place of sgn(v), m/s.
    pub sgn_smoothing_eps: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let magnetization_m = 1.05e6;
        Self {
            mu0: MU0,
            magnetization_m,
            coupling_kd: default_kd(MU0, magnetization_m),
            radius: 0.0125,
            height: 0.01,
            separation: 0.006,
            mass_bottom: 0.5,
            mass_top: 0.30,
            fric_coulomb: 0.3,
            fric_static: 0.6,
            stribeck_velocity: 0.005,
            viscous_top: 1.0,
            viscous_bottom: 3.0,
            sgn_smoothing_eps: 1e-4,
        }
    }
}

/// K_d = μ0·M²/2.
pub fn default_kd(mu0: f64, magnetization: f64) -> f64 {
    0.5 * mu0 * magnetization * magnetization
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("physics.radius_R", self.radius),
            ("physics.height_h", self.height),
            ("physics.separation_d", self.separation),
            ("physics.mass_bottom_m1", self.mass_bottom),
            ("physics.mass_top_m2", self.mass_top),
            ("physics.stribeck_vel_vs", self.stribeck_velocity),
            ("physics.sgn_smoothing_eps", self.sgn_smoothing_eps),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("physics.coupling_Kd", self.coupling_kd),
            ("physics.fric_coulomb_Fc", self.fric_coulomb),
            ("physics.fric_viscous_Kv_top", self.viscous_top),
            ("physics.fric_viscous_Kv_bottom", self.viscous_bottom),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(name, format!("must be >= 0, got {value}")));
            }
        }
        if !(self.fric_static >= self.fric_coulomb) {
            return Err(Error::invalid(
                "physics.fric_static_Fs",
                format!("must be >= Fc ({}), got {}", self.fric_coulomb, self.fric_static),
            ));
        }
        Ok(())
    }

    /// Copy with the magnetic coupling switched off.
    pub fn decoupled(&self) -> Self {
        Self { coupling_kd: 0.0, ..*self }
    }

    /// Copy with every friction term set to zero.
    pub fn frictionless(&self) -> Self {
        Self {
            fric_coulomb: 0.0,
            fric_static: 0.0,
            viscous_top: 0.0,
            viscous_bottom: 0.0,
            ..*self
        }
    }

    fn force_prefactor(&self) -> f64 {
        0.5 * PI * self.coupling_kd * self.radius.powi(4)
    }
}

/// A = 1/d² + 1/(d+2h)² − 2/(d+h)².
pub fn geometric_factor(d: f64, h: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("gap length must be > 0, got {d}")));
    }
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("magnet height must be >= 0, got {h}")));
    }
    let a = 1.0 / (d * d) + 1.0 / ((d + 2.0 * h) * (d + 2.0 * h)) - 2.0 / ((d + h) * (d + h));
    Ok(a.max(0.0))
}

fn geometric_factor_unchecked(params: &PhysicalParams) -> f64 {
    let (d, h) = (params.separation, params.height);
    (1.0 / (d * d) + 1.0 / ((d + 2.0 * h) * (d + 2.0 * h)) - 2.0 / ((d + h) * (d + h))).max(0.0)
}

/// Lateral coupling force on the follower (top) magnet, N.
///
/// Positive when it pulls the follower toward +x. The bracket
/// `A − 1.5·δ²·A²` is clipped at zero: past its root the magnets are
/// separated and the coupling no longer acts.
pub fn lateral_magnetic_force(p1: f64, p2: f64, params: &PhysicalParams) -> f64 {
    let delta = p1 - p2;
    let a = geometric_factor_unchecked(params);
    let bracket = (a - 1.5 * delta * delta * a * a).max(0.0);
    params.force_prefactor() * bracket * (delta / params.separation).atan()
}

/// Forces on (bottom, top). The bottom force is the exact negation of the top one.
pub fn magnetic_force_pair(p1: f64, p2: f64, params: &PhysicalParams) -> (f64, f64) {
    let top = lateral_magnetic_force(p1, p2, params);
    (-top, top)
}

/// ∂F_top/∂δ, with δ = p1 − p2.
pub fn magnetic_stiffness(delta: f64, params: &PhysicalParams) -> f64 {
    let a = geometric_factor_unchecked(params);
    let d = params.separation;
    let raw = a - 1.5 * delta * delta * a * a;
    let c = params.force_prefactor();
    let datan = (1.0 / d) / (1.0 + (delta / d) * (delta / d));
    if raw <= 0.0 {
        return 0.0;
    }
    c * (-3.0 * delta * a * a * (delta / d).atan() + raw * datan)
}

pub fn smooth_sgn(v: f64, eps: f64) -> f64 {
    (v / eps).tanh()
}

/// Stribeck friction on the follower, N. Opposes motion when subtracted from the drive force.
pub fn stribeck_friction(v: f64, params: &PhysicalParams) -> f64 {
    let ratio = v / params.stribeck_velocity;
    let level = params.fric_coulomb + (params.fric_static - params.fric_coulomb) * (-ratio * ratio).exp();
    level * smooth_sgn(v, params.sgn_smoothing_eps) + params.viscous_top * v
}

/// ∂F_fric,top/∂v.
pub fn stribeck_slope(v: f64, params: &PhysicalParams) -> f64 {
    let vs = params.stribeck_velocity;
    let eps = params.sgn_smoothing_eps;
    let ratio = v / vs;
    let g = (-ratio * ratio).exp();
    let level = params.fric_coulomb + (params.fric_static - params.fric_coulomb) * g;
    let dlevel = (params.fric_static - params.fric_coulomb) * g * (-2.0 * v / (vs * vs));
    let s = smooth_sgn(v, eps);
    let ds = (1.0 - s * s) / eps;
    dlevel * s + level * ds + params.viscous_top
}

/// Viscous friction on the driver, N.
pub fn viscous_friction(v: f64, params: &PhysicalParams) -> f64 {
    params.viscous_bottom * v
}

/// Location and value of the maximum restoring force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcePeak {
    /// Offset δ at the force maximum, m.
    pub offset: f64,
    /// Force at that offset, N.
    pub force: f64,
}

/// Offset at which the bracket of the force law reaches zero, m.
pub fn coupling_range(params: &PhysicalParams) -> f64 {
    let a = geometric_factor_unchecked(params);
    if a <= 0.0 {
        return 0.0;
    }
    (2.0 / (3.0 * a)).sqrt()
}

/// Locates the restoring-force maximum on (0, coupling_range) by a grid scan
/// followed by golden-section refinement.
pub fn restoring_peak(params: &PhysicalParams) -> ForcePeak {
    const GRID: usize = 2000;
    let upper = coupling_range(params);
    let force = |delta: f64| lateral_magnetic_force(delta, 0.0, params);
    let step = upper / GRID as f64;
    let best = (0..=GRID)
        .map(|i| i as f64 * step)
        .map(|x| (x, force(x)))
        .fold((0.0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });

    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(upper));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (force(c), force(d));
    for _ in 0..100 {
        if (hi - lo).abs() < 1e-15 {
            break;
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = force(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = force(d);
        }
    }
    let offset = 0.5 * (lo + hi);
    ForcePeak { offset, force: force(offset) }
}
