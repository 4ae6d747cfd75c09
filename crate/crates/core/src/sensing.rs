//! Simulated encoder and time-of-flight sensors, plus photo-interrupter bumps.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::plant::{PlantState, TRACK_LENGTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservabilityMode {
    /// Encoder (bottom) and laser (top).
    Full,
    /// Encoder only.
    Partial,
}

impl ObservabilityMode {
    pub fn dim(&self) -> usize {
        match self {
            ObservabilityMode::Full => 2,
            ObservabilityMode::Partial => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ObservabilityMode::Full => "full",
            ObservabilityMode::Partial => "partial",
        }
    }
}

impl std::str::FromStr for ObservabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "FULL" => Ok(ObservabilityMode::Full),
            "partial" | "PARTIAL" => Ok(ObservabilityMode::Partial),
            other => Err(Error::invalid("mode", format!("expected full or partial, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub z: DVector<f64>,
    pub mode: ObservabilityMode,
    pub t: f64,
}

impl Measurement {
    /// Drops the laser channel of a full measurement.
    pub fn to_partial(&self) -> Measurement {
        Measurement { z: DVector::from_element(1, self.z[0]), mode: ObservabilityMode::Partial, t: self.t }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorParams {
    /// Encoder quantum, m. Zero disables quantization.
    pub encoder_resolution: f64,
    pub laser_noise_sigma: f64,
    pub laser_bias: f64,
    pub interrupter_positions: Vec<f64>,
    /// Momentum imparted to the driver per interrupter crossing, N·s.
    pub interrupter_impulse: f64,
    pub rng_seed: u64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            encoder_resolution: 1e-4,
            laser_noise_sigma: 3e-3,
            laser_bias: 0.0,
            interrupter_positions: vec![0.0, 0.15, 0.30, 0.45, 0.60],
            interrupter_impulse: 2e-3,
            rng_seed: 7,
        }
    }
}

impl SensorParams {
    /// Noise-free sensors: no quantization, no laser noise or bias.
    pub fn exact() -> Self {
        Self { encoder_resolution: 0.0, laser_noise_sigma: 0.0, laser_bias: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_resolution >= 0.0) || !self.encoder_resolution.is_finite() {
            return Err(Error::invalid("sensing.encoder_resolution", "must be finite and >= 0"));
        }
        if !(self.laser_noise_sigma >= 0.0) || !self.laser_noise_sigma.is_finite() {
            return Err(Error::invalid("sensing.laser_noise_sigma", "must be finite and >= 0"));
        }
        if !self.laser_bias.is_finite() || !(self.interrupter_impulse >= 0.0) {
            return Err(Error::invalid("sensing", "bias must be finite and impulse >= 0"));
        }
        if self.interrupter_positions.len() != 5
            || self.interrupter_positions.iter().any(|&p| !(0.0..=TRACK_LENGTH).contains(&p))
        {
            return Err(Error::invalid(
                "sensing.interrupter_positions",
                format!("need 5 positions within the track, got {:?}", self.interrupter_positions),
            ));
        }
        Ok(())
    }
}

/// x1 rounded to the nearest encoder count.
pub fn encoder_read(state: &PlantState, sp: &SensorParams) -> f64 {
    let res = sp.encoder_resolution;
    if res == 0.0 {
        state.x1
    } else {
        (state.x1 / res).round() * res
    }
}

/// Sensor bank owning its noise stream.
#[derive(Debug, Clone)]
pub struct Sensors {
    params: SensorParams,
    rng: ChaCha8Rng,
}

impl Sensors {
    pub fn new(params: SensorParams) -> Result<Self> {
        params.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        Ok(Self { params, rng })
    }

    pub fn params(&self) -> &SensorParams {
        &self.params
    }

    pub fn encoder_read(&self, state: &PlantState) -> f64 {
        encoder_read(state, &self.params)
    }

    /// x2 + bias + N(0, σ²).
    pub fn laser_read(&mut self, state: &PlantState) -> f64 {
        let sigma = self.params.laser_noise_sigma;
        let noise = if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("sigma validated").sample(&mut self.rng)
        } else {
            0.0
        };
        state.x2 + self.params.laser_bias + noise
    }

    pub fn measure(&mut self, state: &PlantState, mode: ObservabilityMode) -> Measurement {
        let z = match mode {
            ObservabilityMode::Full => {
                let enc = self.encoder_read(state);
                DVector::from_vec(vec![enc, self.laser_read(state)])
            }
            ObservabilityMode::Partial => DVector::from_element(1, self.encoder_read(state)),
        };
        Measurement { z, mode, t: state.t }
    }
}

/// A photo-interrupter bump applied to the driver for one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseEvent {
    /// Force on the driver, N (impulse spread over one step).
    pub force: f64,
    pub crossings: usize,
}

/// Number of interrupter positions strictly crossed going from `from` to `to`.
pub fn interrupter_crossings(from: f64, to: f64, sp: &SensorParams) -> usize {
    if from == to {
        return 0;
    }
    sp.interrupter_positions
        .iter()
        .filter(|&&p| (from < p && p <= to) || (to <= p && p < from))
        .count()
}

/// Bump on the driver when its position crossed an interrupter during the
/// last step. The bump opposes the direction of travel.
pub fn interrupter_disturbance(prev: &PlantState, next: &PlantState, sp: &SensorParams, dt: f64) -> Option<ImpulseEvent> {
    if sp.interrupter_impulse == 0.0 {
        return None;
    }
    let crossings = interrupter_crossings(prev.x1, next.x1, sp);
    if crossings == 0 {
        return None;
    }
    let direction = (next.x1 - prev.x1).signum();
    Some(ImpulseEvent { force: -direction * sp.interrupter_impulse * crossings as f64 / dt, crossings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x1: f64, x2: f64) -> PlantState {
        PlantState { x1, x2, ..Default::default() }
    }

    #[test]
    fn encoder_quantizes() {
        let sp = SensorParams::default();
        assert_eq!(encoder_read(&at(0.0, 0.0), &sp), 0.0);
        assert!((encoder_read(&at(0.01234, 0.0), &sp) - 0.0123).abs() < 1e-15);
        for i in 0..1000 {
            let x = i as f64 * 0.000_613_7;
            assert!((encoder_read(&at(x, 0.0), &sp) - x).abs() <= sp.encoder_resolution / 2.0 + 1e-15);
        }
    }

    #[test]
    fn noiseless_laser_is_exact() {
        let mut s = Sensors::new(SensorParams::exact()).unwrap();
        assert_eq!(s.laser_read(&at(0.0, 0.1234567)), 0.1234567);
    }

    #[test]
    fn laser_mean_converges() {
        let sp = SensorParams { laser_bias: 0.001, ..SensorParams::default() };
        let mut s = Sensors::new(sp.clone()).unwrap();
        let n = 10_000;
        let mean = (0..n).map(|_| s.laser_read(&at(0.0, 0.2))).sum::<f64>() / n as f64;
        assert!((mean - 0.201).abs() <= 3.0 * sp.laser_noise_sigma / 100.0);
    }

    #[test]
    fn same_seed_same_reads() {
        let mut a = Sensors::new(SensorParams::default()).unwrap();
        let mut b = Sensors::new(SensorParams::default()).unwrap();
        for i in 0..100 {
            let s = at(0.1, 0.1 + i as f64 * 1e-4);
            assert_eq!(a.measure(&s, ObservabilityMode::Full), b.measure(&s, ObservabilityMode::Full));
        }
    }

    #[test]
    fn measurement_dimension_follows_mode() {
        let mut s = Sensors::new(SensorParams::exact()).unwrap();
        let st = at(0.25, 0.24);
        let p = s.measure(&st, ObservabilityMode::Partial);
        assert_eq!(p.z.len(), 1);
        let f = s.measure(&st, ObservabilityMode::Full);
        assert_eq!(f.z.as_slice(), &[0.25, 0.24]);
        assert_eq!(f.to_partial().z.as_slice(), &[0.25]);
    }

    #[test]
    fn full_measurements_stay_in_tails() {
        let sp = SensorParams::default();
        let mut s = Sensors::new(sp.clone()).unwrap();
        let st = at(0.2, 0.2);
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| {
                let m = s.measure(&st, ObservabilityMode::Full);
                (m.z[0] - 0.2).abs() <= 5.0 * sp.laser_noise_sigma.max(sp.encoder_resolution)
                    && (m.z[1] - 0.2).abs() <= 5.0 * sp.laser_noise_sigma
            })
            .count();
        assert!(inside as f64 >= 0.9999 * n as f64);
    }

    #[test]
    fn crossings_are_counted_per_direction() {
        let sp = SensorParams::default();
        assert_eq!(interrupter_crossings(0.16, 0.29, &sp), 0);
        assert_eq!(interrupter_crossings(0.299, 0.301, &sp), 1);
        assert_eq!(interrupter_crossings(0.301, 0.299, &sp), 1);
        // landing on a sensor counts once, leaving it again does not
        assert_eq!(interrupter_crossings(0.29, 0.30, &sp), 1);
        assert_eq!(interrupter_crossings(0.30, 0.31, &sp), 0);
    }

    #[test]
    fn impulse_opposes_travel() {
        let sp = SensorParams::default();
        let ev = interrupter_disturbance(&at(0.149, 0.0), &at(0.151, 0.0), &sp, 1e-3).unwrap();
        assert_eq!(ev.crossings, 1);
        assert!((ev.force + 2.0).abs() < 1e-12);
        assert!(interrupter_disturbance(&at(0.16, 0.0), &at(0.17, 0.0), &sp, 1e-3).is_none());
        let off = SensorParams { interrupter_impulse: 0.0, ..sp };
        assert!(interrupter_disturbance(&at(0.149, 0.0), &at(0.151, 0.0), &off, 1e-3).is_none());
    }

    #[test]
    fn validation() {
        assert!(SensorParams::default().validate().is_ok());
        let bad = SensorParams { interrupter_positions: vec![0.1, 0.2], ..SensorParams::default() };
        assert!(bad.validate().is_err());
        let bad = SensorParams { laser_noise_sigma: -1.0, ..SensorParams::default() };
        assert!(Sensors::new(bad).is_err());
    }
}
