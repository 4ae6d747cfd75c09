//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use maglink::estimator::transition_jacobian;
use maglink::physics::{lateral_magnetic_force, magnetic_stiffness, stribeck_slope, PhysicalParams};
use maglink::plant::{Disturbance, Plant, PlantState, Substeps};
use nalgebra::Matrix4;

pub fn calibrated() -> PhysicalParams {
    PhysicalParams { coupling_kd: 52482.68, ..PhysicalParams::default() }
}

/// Least-squares slope of ln(err) against ln(h).
pub fn slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// Single-step error against a finely resolved reference.
pub fn local_error(plant: &Plant, s: &PlantState, h: f64) -> f64 {
    let none = Disturbance::none();
    let coarse = plant.with_substeps(Substeps::Fixed(1)).step_unclamped(s, 2.0, h, &none).unwrap();
    let fine = plant.with_substeps(Substeps::Fixed(4096)).step_unclamped(s, 2.0, h, &none).unwrap();
    (coarse.to_vector() - fine.to_vector()).norm()
}

/// Follower sliding fast enough that tanh(v/eps) is flat.
pub fn smooth_segment() -> PlantState {
    PlantState { x1: 0.3015, v1: 0.04, x2: 0.3, v2: 0.03, t: 0.0 }
}

pub fn integrator_slope() -> f64 {
    let plant = Plant::new(calibrated());
    let s = smooth_segment();
    let hs = [2e-3, 1e-3, 5e-4, 2.5e-4];
    let errs: Vec<f64> = hs.iter().map(|&h| local_error(&plant, &s, h)).collect();
    slope(&hs, &errs)
}

/// Continuous-time Jacobian of the plant from the analytic force slopes.
pub fn analytic_jacobian(s: &PlantState, p: &PhysicalParams) -> Matrix4<f64> {
    let k = magnetic_stiffness(s.offset(), p);
    let (m1, m2) = (p.mass_bottom, p.mass_top);
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        -k / m1, -p.viscous_bottom / m1, k / m1, 0.0,
        0.0, 0.0, 0.0, 1.0,
        k / m2, 0.0, -k / m2, -stribeck_slope(s.v2, p) / m2,
    )
}

/// Slope of ‖F_fd − (I + J·dt)‖ over halving dt.
pub fn jacobian_slope() -> f64 {
    let p = calibrated();
    let plant = Plant::new(p);
    let s = PlantState { x1: 0.3012, v1: 0.03, x2: 0.3, v2: 0.025, t: 0.0 };
    let j = analytic_jacobian(&s, &p);
    // the dt³ term carries (k/m)², so stay well below 1/(k/m)
    let dts = [2e-4, 1e-4, 5e-5, 2.5e-5];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let f = transition_jacobian(&s.to_vector(), 0.0, 1.0, dt, &plant).unwrap();
            (f - (Matrix4::identity() + j * dt)).norm()
        })
        .collect();
    slope(&dts, &errs)
}

/// ∫₀^δ F_top(s) ds by composite Simpson; the coupling potential is U(δ)
/// with F_top = dU/dδ.
pub fn coupling_potential(delta: f64, p: &PhysicalParams) -> f64 {
    let n = 2000;
    let h = delta / n as f64;
    let f = |s: f64| lateral_magnetic_force(s, 0.0, p);
    let mut sum = f(0.0) + f(delta);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0
}
