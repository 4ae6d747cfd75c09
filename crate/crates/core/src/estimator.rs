//! Extended Kalman filter over the coupled-magnet plant.
//!
//! The transition Jacobian is a central finite difference of the very same
//! one-step RK4 map that advances the estimate, so the covariance is
//! propagated with the discretization actually used.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plant::{Disturbance, Plant, PlantState};
use crate::sensing::{Measurement, ObservabilityMode};

/// Largest tolerated |P − Pᵀ| entry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest tolerated eigenvalue of P.
pub const PSD_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub q: Matrix4<f64>,
    /// 1×1 (partial) or 2×2 (full).
    pub r: DMatrix<f64>,
    pub p0: Matrix4<f64>,
    pub x0: Vector4<f64>,
}

impl NoiseConfig {
    pub fn diagonal(q_position: f64, q_velocity: f64, r: &[f64], p0: Matrix4<f64>, x0: Vector4<f64>) -> Self {
        Self {
            q: Matrix4::from_diagonal(&Vector4::new(q_position, q_velocity, q_position, q_velocity)),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(r)),
            p0,
            x0,
        }
    }

    pub fn mode(&self) -> Option<ObservabilityMode> {
        match self.r.nrows() {
            1 => Some(ObservabilityMode::Partial),
            2 => Some(ObservabilityMode::Full),
            _ => None,
        }
    }

    /// Restricts R to the channels of `mode` (encoder first).
    pub fn for_mode(&self, mode: ObservabilityMode) -> Result<Self> {
        let dim = mode.dim();
        if self.r.nrows() < dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.r.nrows() });
        }
        Ok(Self { r: self.r.view((0, 0), (dim, dim)).into_owned(), ..self.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        check_psd("noise.Q", &self.q)?;
        check_psd("noise.P0", &self.p0)?;
        if self.mode().is_none() || !self.r.is_square() {
            return Err(Error::invalid("noise.R", format!("must be 1x1 or 2x2, got {}x{}", self.r.nrows(), self.r.ncols())));
        }
        if self.r.clone().cholesky().is_none() || self.r != self.r.transpose() {
            return Err(Error::invalid("noise.R", "must be symmetric positive definite"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise.x0", "must be finite"));
        }
        Ok(())
    }
}

fn check_psd(name: &'static str, m: &Matrix4<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(name, "non-finite entry"));
    }
    if asymmetry(m) > SYMMETRY_TOL {
        return Err(Error::invalid(name, "not symmetric"));
    }
    let min = min_eigenvalue(m);
    if min < PSD_TOL {
        return Err(Error::invalid(name, format!("not positive semidefinite (min eigenvalue {min:e})")));
    }
    Ok(())
}

pub fn asymmetry(m: &Matrix4<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn min_eigenvalue(m: &Matrix4<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub x_hat: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t: f64,
}

impl EstimatorState {
    pub fn as_plant_state(&self) -> PlantState {
        PlantState::from_vector(&self.x_hat, self.t)
    }
}

/// Worst covariance figures seen across every predict and update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHealth {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub checks: usize,
}

impl Default for CovarianceHealth {
    fn default() -> Self {
        Self { max_asymmetry: 0.0, min_eigenvalue: f64::INFINITY, checks: 0 }
    }
}

impl CovarianceHealth {
    fn record(&mut self, p: &Matrix4<f64>) -> f64 {
        let min = min_eigenvalue(p);
        self.max_asymmetry = self.max_asymmetry.max(asymmetry(p));
        self.min_eigenvalue = self.min_eigenvalue.min(min);
        self.checks += 1;
        min
    }

    pub fn merge(&mut self, other: &CovarianceHealth) {
        self.max_asymmetry = self.max_asymmetry.max(other.max_asymmetry);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.checks += other.checks;
    }

    pub fn is_healthy(&self) -> bool {
        self.max_asymmetry <= SYMMETRY_TOL && self.min_eigenvalue >= PSD_TOL
    }
}

fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Position selector rows for `mode`.
pub fn measurement_matrix(mode: ObservabilityMode) -> DMatrix<f64> {
    match mode {
        ObservabilityMode::Full => DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        ObservabilityMode::Partial => DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
    }
}

fn one_step(plant: &Plant, x: &Vector4<f64>, t: f64, u: f64, dt: f64) -> Result<Vector4<f64>> {
    Ok(plant.step_unclamped(&PlantState::from_vector(x, t), u, dt, &Disturbance::none())?.to_vector())
}

/// Central-difference Jacobian of the one-step map, ε_i = max(1e-7, 1e-7·|x_i|).
///
/// Track clamping is left out of the differentiated map.
pub fn transition_jacobian(x_hat: &Vector4<f64>, t: f64, u: f64, dt: f64, plant: &Plant) -> Result<Matrix4<f64>> {
    let mut jac = Matrix4::zeros();
    for i in 0..4 {
        let eps = (1e-7 * x_hat[i].abs()).max(1e-7);
        let mut plus = *x_hat;
        let mut minus = *x_hat;
        plus[i] += eps;
        minus[i] -= eps;
        let col = (one_step(plant, &plus, t, u, dt)? - one_step(plant, &minus, t, u, dt)?) / (2.0 * eps);
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// x̂ ← f(x̂, u); P ← F·P·Fᵀ + Q.
pub fn predict(est: &EstimatorState, u: f64, dt: f64, plant: &Plant, q: &Matrix4<f64>) -> Result<EstimatorState> {
    let state = est.as_plant_state();
    let next = plant.step(&state, u, dt, &Disturbance::none()).map_err(|e| divergence(0, e.to_string()))?;
    let f = transition_jacobian(&est.x_hat, est.t, u, dt, plant).map_err(|e| divergence(0, e.to_string()))?;
    let p = symmetrize(&(f * est.p * f.transpose() + q));
    if p.iter().any(|v| !v.is_finite()) {
        return Err(divergence(0, "non-finite predicted covariance".into()));
    }
    Ok(EstimatorState { x_hat: next.to_vector(), p, t: next.t })
}

/// Kalman gain, state correction and P ← (I − K·H)·P.
pub fn update(est: &EstimatorState, z: &Measurement, r: &DMatrix<f64>) -> Result<EstimatorState> {
    let dim = z.mode.dim();
    if z.z.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: z.z.len() });
    }
    if r.nrows() != dim || r.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: r.nrows(), got: dim });
    }
    if z.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("measurement", "non-finite reading"));
    }
    let h = measurement_matrix(z.mode);
    let p = DMatrix::from_iterator(4, 4, est.p.iter().copied());
    let s = &h * &p * h.transpose() + r;
    let s_inv = match s.clone().cholesky() {
        Some(c) => c.inverse(),
        None => return Err(Error::SingularInnovation { det: s.determinant(), dim }),
    };
    let k = &p * h.transpose() * s_inv;
    let x = DVector::from_iterator(4, est.x_hat.iter().copied());
    let innovation = &z.z - &h * &x;
    let x_new = x + &k * innovation;
    let p_new = (DMatrix::identity(4, 4) - &k * &h) * p;
    let p_new = Matrix4::from_iterator(p_new.iter().copied());
    Ok(EstimatorState { x_hat: Vector4::from_iterator(x_new.iter().copied()), p: symmetrize(&p_new), t: est.t })
}

fn divergence(step: usize, reason: String) -> Error {
    Error::EstimatorDivergence { step, reason }
}

/// Stateful filter: one instance per trial.
#[derive(Debug, Clone)]
pub struct Ekf {
    plant: Plant,
    noise: NoiseConfig,
    state: EstimatorState,
    health: CovarianceHealth,
    step: usize,
}

impl Ekf {
    pub fn new(plant: Plant, noise: NoiseConfig, t0: f64) -> Result<Self> {
        noise.validate()?;
        let state = EstimatorState { x_hat: noise.x0, p: noise.p0, t: t0 };
        Ok(Self { plant, noise, state, health: CovarianceHealth::default(), step: 0 })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn health(&self) -> &CovarianceHealth {
        &self.health
    }

    pub fn mode(&self) -> ObservabilityMode {
        self.noise.mode().expect("validated")
    }

    pub fn predict(&mut self, u: f64, dt: f64) -> Result<()> {
        let next = predict(&self.state, u, dt, &self.plant, &self.noise.q).map_err(|e| self.tag(e))?;
        self.accept(next)
    }

    pub fn update(&mut self, z: &Measurement) -> Result<()> {
        let next = update(&self.state, z, &self.noise.r).map_err(|e| self.tag(e))?;
        self.accept(next)?;
        self.step += 1;
        Ok(())
    }

    fn tag(&self, e: Error) -> Error {
        match e {
            Error::EstimatorDivergence { reason, .. } => divergence(self.step, reason),
            other => other,
        }
    }

    fn accept(&mut self, next: EstimatorState) -> Result<()> {
        if next.x_hat.iter().any(|v| !v.is_finite()) {
            return Err(divergence(self.step, "non-finite state estimate".into()));
        }
        let min = self.health.record(&next.p);
        if min < PSD_TOL {
            return Err(divergence(self.step, format!("covariance lost definiteness (min eigenvalue {min:e})")));
        }
        self.state = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// σ_max / σ_min over all four singular values (infinite when rank-deficient).
    pub condition: f64,
    pub threshold: f64,
}

/// Relative singular-value cut-off used for the numerical rank.
pub const RANK_RTOL: f64 = 1e-10;

/// Rank of [H; HF; HF²; HF³] at a linearization point.
pub fn observability_rank(
    x_lin: &Vector4<f64>,
    u: f64,
    dt: f64,
    plant: &Plant,
    mode: ObservabilityMode,
) -> Result<ObservabilityReport> {
    let f = transition_jacobian(x_lin, 0.0, u, dt, plant)?;
    let f = DMatrix::from_iterator(4, 4, f.iter().copied());
    let h = measurement_matrix(mode);
    let dim = h.nrows();
    let mut obs = DMatrix::zeros(4 * dim, 4);
    let mut block = h.clone();
    for i in 0..4 {
        obs.view_mut((i * dim, 0), (dim, 4)).copy_from(&block);
        block = &block * &f;
    }
    let mut sv: Vec<f64> = obs.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let threshold = sv[0] * RANK_RTOL;
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    let smallest = *sv.last().expect("4 singular values");
    let condition = if smallest > 0.0 { sv[0] / smallest } else { f64::INFINITY };
    Ok(ObservabilityReport { rank, singular_values: sv, condition, threshold })
}

/// Root-mean-square difference of two equally long series.
pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch { left: estimates.len(), right: truth.len() });
    }
    if estimates.is_empty() {
        return Err(Error::Empty("rmse series"));
    }
    let sum: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// A recorded run with ground truth: `inputs[k]` moves `truth[k]` to
/// `truth[k + 1]`, where `measurements[k]` was taken.
#[derive(Debug, Clone)]
pub struct LoggedTrial {
    pub dt: f64,
    pub truth: Vec<PlantState>,
    pub inputs: Vec<f64>,
    pub measurements: Vec<Measurement>,
}

impl LoggedTrial {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("logged trial"));
        }
        if self.truth.len() != self.inputs.len() + 1 {
            return Err(Error::LengthMismatch { left: self.truth.len(), right: self.inputs.len() + 1 });
        }
        if self.measurements.len() != self.inputs.len() {
            return Err(Error::LengthMismatch { left: self.measurements.len(), right: self.inputs.len() });
        }
        Ok(())
    }
}

/// Position RMSE (bottom, top) of a filter run over a logged trial, plus the
/// final filter.
pub fn replay(trial: &LoggedTrial, plant: &Plant, noise: &NoiseConfig) -> Result<(f64, f64, Ekf)> {
    trial.validate()?;
    let mode = noise.mode().ok_or(Error::invalid("noise.R", "bad dimension"))?;
    let mut ekf = Ekf::new(*plant, noise.clone(), trial.truth[0].t)?;
    let n = trial.inputs.len();
    let (mut e1, mut e2, mut t1, mut t2) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        ekf.predict(trial.inputs[k], trial.dt)?;
        let z = match mode {
            ObservabilityMode::Full => trial.measurements[k].clone(),
            ObservabilityMode::Partial => trial.measurements[k].to_partial(),
        };
        ekf.update(&z)?;
        e1.push(ekf.state().x_hat[0]);
        e2.push(ekf.state().x_hat[2]);
        t1.push(trial.truth[k + 1].x1);
        t2.push(trial.truth[k + 1].x2);
    }
    Ok((rmse(&e1, &t1)?, rmse(&e2, &t2)?, ekf))
}

/// Diagonal search space for offline tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub q_position: Vec<f64>,
    pub q_velocity: Vec<f64>,
    /// Multipliers on `r_base`.
    pub r_scale: Vec<f64>,
    /// Sensor-informed diagonal (encoder, laser) variances.
    pub r_base: [f64; 2],
    pub p0: Matrix4<f64>,
}

impl TuningGrid {
    /// Log-spaced values from 10^lo to 10^hi, one per decade.
    pub fn decades(lo: i32, hi: i32) -> Vec<f64> {
        (lo..=hi).map(|e| 10f64.powi(e)).collect()
    }

    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &qp in &self.q_position {
            for &qv in &self.q_velocity {
                for &rs in &self.r_scale {
                    out.push((qp, qv, rs));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub noise: NoiseConfig,
    /// Summed bottom + top position RMSE of the winner, m.
    pub score: f64,
    /// (q_position, q_velocity, r_scale, score) per grid point, in grid order.
    pub table: Vec<(f64, f64, f64, f64)>,
}

/// Picks the grid point minimizing summed position RMSE over `trials`. Ties go
/// to the earlier grid point. The winner's final covariance becomes `P0`.
pub fn tune_offline(
    trials: &[LoggedTrial],
    grid: &TuningGrid,
    plant: &Plant,
    mode: ObservabilityMode,
) -> Result<TuningResult> {
    if trials.is_empty() {
        return Err(Error::Empty("tuning trials"));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Empty("tuning grid"));
    }
    let noise_at = |qp: f64, qv: f64, rs: f64, x0: Vector4<f64>| {
        let r = &[grid.r_base[0] * rs, grid.r_base[1] * rs][..mode.dim()];
        NoiseConfig::diagonal(qp, qv, r, grid.p0, x0)
    };
    let evaluated: Vec<Result<(f64, Matrix4<f64>)>> = points
        .par_iter()
        .map(|&(qp, qv, rs)| {
            let mut score = 0.0;
            let mut last_p = grid.p0;
            for trial in trials {
                let noise = noise_at(qp, qv, rs, trial.truth[0].to_vector());
                match replay(trial, plant, &noise) {
                    Ok((b, t, ekf)) => {
                        score += b + t;
                        last_p = ekf.state().p;
                    }
                    Err(Error::EstimatorDivergence { .. }) => return Ok((f64::INFINITY, last_p)),
                    Err(e) => return Err(e),
                }
            }
            Ok((score, last_p))
        })
        .collect();

    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, Matrix4<f64>)> = None;
    for (i, (res, &(qp, qv, rs))) in evaluated.into_iter().zip(&points).enumerate() {
        let (score, p) = res?;
        table.push((qp, qv, rs, score));
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((i, score, p));
        }
    }
    let (i, score, p) = best.expect("non-empty grid");
    if !score.is_finite() {
        return Err(divergence(0, "every grid point diverged".into()));
    }
    let (qp, qv, rs) = points[i];
    let noise = NoiseConfig { p0: p, ..noise_at(qp, qv, rs, trials[0].truth[0].to_vector()) };
    Ok(TuningResult { noise, score, table })
}

/// Diagonal R from sensor characteristics: encoder quantization variance
/// (res²/12) and laser variance.
pub fn sensor_r(encoder_resolution: f64, laser_sigma: f64) -> Matrix2<f64> {
    let enc = (encoder_resolution * encoder_resolution / 12.0).max(1e-14);
    let laser = (laser_sigma * laser_sigma).max(1e-14);
    Matrix2::new(enc, 0.0, 0.0, laser)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::PhysicalParams;
    use crate::plant::Substeps;
    use crate::sensing::{SensorParams, Sensors};

    fn coupled() -> Plant {
        Plant::new(PhysicalParams { coupling_kd: 5.25e4, ..PhysicalParams::default() })
    }

    fn state(p: Matrix4<f64>) -> EstimatorState {
        EstimatorState { x_hat: Vector4::new(0.2, 0.0, 0.2, 0.0), p, t: 0.0 }
    }

    #[test]
    fn scalar_predict_reduction() {
        let plant = Plant::new(PhysicalParams::default().decoupled().frictionless());
        let p = Matrix4::from_diagonal(&Vector4::new(1.0, 0.0, 0.0, 0.0));
        let q = Matrix4::from_diagonal(&Vector4::new(0.5, 0.0, 0.0, 0.0));
        let out = predict(&state(p), 0.0, 1e-3, &plant, &q).unwrap();
        // F is a finite difference, exact only to ~1e-9
        assert!((out.p[(0, 0)] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn predict_adds_trace_of_q_on_static_plant() {
        let plant = Plant::new(PhysicalParams::default().decoupled().frictionless());
        let p = Matrix4::from_diagonal(&Vector4::new(2.0, 0.0, 3.0, 0.0));
        let q = Matrix4::identity() * 1e-4;
        let out = predict(&state(p), 0.0, 1e-3, &plant, &q).unwrap();
        assert!((out.p.trace() - (p.trace() + q.trace())).abs() < 1e-9);
    }

    #[test]
    fn predict_with_zero_q_follows_truth() {
        let plant = coupled();
        let truth = PlantState { x1: 0.2, v1: 0.02, x2: 0.199, v2: 0.018, t: 0.0 };
        let est = EstimatorState { x_hat: truth.to_vector(), p: Matrix4::zeros(), t: 0.0 };
        let out = predict(&est, 1.5, 1e-3, &plant, &Matrix4::zeros()).unwrap();
        let stepped = plant.step(&truth, 1.5, 1e-3, &Disturbance::none()).unwrap();
        assert_eq!(out.x_hat, stepped.to_vector());
    }

    #[test]
    fn scalar_update_reduction() {
        let p = Matrix4::from_diagonal(&Vector4::new(1.0, 0.0, 0.0, 0.0));
        let z = Measurement { z: DVector::from_element(1, 1.2), mode: ObservabilityMode::Partial, t: 0.0 };
        let out = update(&state(p), &z, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((out.p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out.x_hat[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_state() {
        let p = Matrix4::identity() * 1e-4;
        let est = state(p);
        let z = Measurement { z: DVector::from_vec(vec![0.2, 0.2]), mode: ObservabilityMode::Full, t: 0.0 };
        let out = update(&est, &z, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(out.x_hat, est.x_hat);
        assert!(out.p.trace() <= est.p.trace());
    }

    #[test]
    fn huge_r_ignores_measurement() {
        let p = Matrix4::identity() * 1e-2;
        let est = state(p);
        let z = Measurement { z: DVector::from_vec(vec![0.3, 0.1]), mode: ObservabilityMode::Full, t: 0.0 };
        let out = update(&est, &z, &(DMatrix::identity(2, 2) * 1e12)).unwrap();
        let moved = (out.x_hat - est.x_hat).amax();
        assert!(moved <= 1e-6 * 0.1);
    }

    #[test]
    fn update_rejects_wrong_dimension() {
        let z = Measurement { z: DVector::from_vec(vec![0.3, 0.1]), mode: ObservabilityMode::Full, t: 0.0 };
        let err = update(&state(Matrix4::identity()), &z, &DMatrix::identity(1, 1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn singular_innovation_is_reported() {
        let z = Measurement { z: DVector::from_element(1, 0.2), mode: ObservabilityMode::Partial, t: 0.0 };
        let err = update(&state(Matrix4::zeros()), &z, &DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::SingularInnovation { .. }));
    }

    #[test]
    fn linear_plant_jacobian_is_exact() {
        let plant = Plant::new(PhysicalParams::default().decoupled().frictionless());
        let dt = 1e-3;
        let x = Vector4::new(0.2, 0.03, 0.25, -0.01);
        let f = transition_jacobian(&x, 0.0, 2.0, dt, &plant).unwrap();
        let expected = Matrix4::new(1.0, dt, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, dt, 0.0, 0.0, 0.0, 1.0);
        assert!((f - expected).amax() < 1e-9, "{f}");
    }

    #[test]
    fn position_rows_follow_kinematics() {
        let plant = coupled();
        for dt in [1e-4, 1e-3] {
            let x = Vector4::new(0.2, 0.02, 0.1995, 0.02);
            let f = transition_jacobian(&x, 0.0, 0.5, dt, &plant).unwrap();
            assert!((f[(0, 1)] - dt).abs() < 0.1 * dt, "{}", f[(0, 1)]);
            assert!((f[(2, 3)] - dt).abs() < 0.1 * dt, "{}", f[(2, 3)]);
        }
    }

    #[test]
    fn full_mode_is_observable() {
        let plant = coupled();
        let x = Vector4::new(0.2, 0.02, 0.1995, 0.02);
        let rep = observability_rank(&x, 0.5, 1e-3, &plant, ObservabilityMode::Full).unwrap();
        assert_eq!(rep.rank, 4);
    }

    #[test]
    fn decoupled_partial_mode_has_rank_two() {
        let plant = Plant::new(PhysicalParams::default().decoupled());
        let x = Vector4::new(0.2, 0.02, 0.1995, 0.02);
        let rep = observability_rank(&x, 0.5, 1e-3, &plant, ObservabilityMode::Partial).unwrap();
        assert_eq!(rep.rank, 2);
        assert!(rep.condition.is_infinite() || rep.condition > 1e10);
    }

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((rmse(&[2.0, 2.0], &[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let a = [0.3, -1.2, 4.0];
        let b = [0.1, 0.7, 3.5];
        let scaled_a: Vec<f64> = a.iter().map(|v| -2.5 * v).collect();
        let scaled_b: Vec<f64> = b.iter().map(|v| -2.5 * v).collect();
        let base = rmse(&a, &b).unwrap();
        assert!((rmse(&scaled_a, &scaled_b).unwrap() - 2.5 * base).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn noise_config_validation() {
        let good = NoiseConfig::diagonal(1e-8, 1e-6, &[1e-8, 1e-5], Matrix4::identity() * 1e-6, Vector4::zeros());
        assert!(good.validate().is_ok());
        assert_eq!(good.for_mode(ObservabilityMode::Partial).unwrap().r.nrows(), 1);
        let bad_r = NoiseConfig { r: DMatrix::zeros(2, 2), ..good.clone() };
        assert!(bad_r.validate().is_err());
        let bad_q = NoiseConfig { q: -Matrix4::identity(), ..good };
        assert!(bad_q.validate().is_err());
    }

    fn short_trial(sp: SensorParams, steps: usize) -> LoggedTrial {
        let plant = coupled();
        let dt = 1e-3;
        let mut sensors = Sensors::new(sp).unwrap();
        let mut truth = vec![PlantState::at_rest(0.2)];
        let mut inputs = Vec::new();
        let mut measurements = Vec::new();
        for k in 0..steps {
            let cur = truth[k];
            let target = if k < steps / 2 { 0.02 } else { -0.02 };
            let u = crate::control::motor_force(target, &cur, 400.0, 40.0);
            let next = plant.step(&cur, u, dt, &Disturbance::none()).unwrap();
            measurements.push(sensors.measure(&next, ObservabilityMode::Full));
            inputs.push(u);
            truth.push(next);
        }
        LoggedTrial { dt, truth, inputs, measurements }
    }

    #[test]
    fn tuning_returns_psd_p0_and_full_table() {
        let trial = short_trial(SensorParams::default(), 400);
        let grid = TuningGrid {
            q_position: vec![1e-10, 1e-8],
            q_velocity: vec![1e-6, 1e-4],
            r_scale: vec![0.5, 1.0, 2.0],
            r_base: [1e-4f64.powi(2) / 12.0, 3e-3f64.powi(2)],
            p0: Matrix4::identity() * 1e-6,
        };
        let res = tune_offline(&[trial], &grid, &coupled(), ObservabilityMode::Full).unwrap();
        assert_eq!(res.table.len(), 12);
        assert!(res.table.iter().all(|row| row.3 >= res.score));
        assert!(asymmetry(&res.noise.p0) <= SYMMETRY_TOL);
        assert!(min_eigenvalue(&res.noise.p0) >= PSD_TOL);
    }

    #[test]
    fn tuning_rejects_empty_inputs() {
        let trial = short_trial(SensorParams::default(), 10);
        let empty = TuningGrid {
            q_position: vec![],
            q_velocity: vec![1e-6],
            r_scale: vec![1.0],
            r_base: [1e-9, 1e-5],
            p0: Matrix4::identity() * 1e-6,
        };
        assert!(matches!(tune_offline(&[trial], &empty, &coupled(), ObservabilityMode::Full), Err(Error::Empty(_))));
        let grid = TuningGrid { q_position: vec![1e-8], ..empty };
        assert!(tune_offline(&[], &grid, &coupled(), ObservabilityMode::Full).is_err());
    }

    #[test]
    fn fixed_substeps_are_respected_by_jacobian() {
        let plant = coupled().with_substeps(Substeps::Fixed(3));
        let x = Vector4::new(0.2, 0.02, 0.1995, 0.02);
        let f = transition_jacobian(&x, 0.0, 0.5, 1e-4, &plant).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }
}
