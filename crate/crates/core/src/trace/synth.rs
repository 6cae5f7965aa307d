use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GroundTruthPose, Payload, Trace, TraceEvent};
use crate::error::{Error, Result};

pub const IMU_RATE_HZ: u64 = 200;
const GPS_EVERY: u64 = 200;
const LIDAR_EVERY: u64 = 40;
const TRUTH_EVERY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub gps_pos_sigma: f64,
    pub lidar_pos_sigma: f64,
    pub imu_accel_sigma: f64,
    pub imu_gyro_sigma: f64,
    pub gps_var_nominal: f64,
    pub lidar_var_nominal: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// Perfect sensors that still report the nominal variances.
    pub fn noise_free(&self) -> Self {
        Self {
            gps_pos_sigma: 0.0,
            lidar_pos_sigma: 0.0,
            imu_accel_sigma: 0.0,
            imu_gyro_sigma: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("noise.gps_pos_sigma", self.gps_pos_sigma),
            ("noise.lidar_pos_sigma", self.lidar_pos_sigma),
            ("noise.imu_accel_sigma", self.imu_accel_sigma),
            ("noise.imu_gyro_sigma", self.imu_gyro_sigma),
        ];
        for (path, v) in sigmas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(path, "must be finite and >= 0"));
            }
        }
        for (path, v) in [
            ("noise.gps_var_nominal", self.gps_var_nominal),
            ("noise.lidar_var_nominal", self.lidar_var_nominal),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(path, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        crate::defaults::defaults().noise
    }
}

/// Straight-road driving at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub speed_mps: f64,
    pub heading: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        crate::defaults::defaults().scenario
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnconfidentPeriod {
    pub start: f64,
    pub end: f64,
    pub lidar_var_scale: f64,
    pub lidar_bias_sigma: f64,
}

impl UnconfidentPeriod {
    fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    /// Periods of `length` seconds placed every `every` seconds starting at
    /// `first`, kept only while they end before `until`.
    pub fn periodic(first: f64, every: f64, length: f64, until: f64, scale: f64, bias: f64) -> Vec<Self> {
        let mut out = Vec::new();
        let mut start = first;
        while every > 0.0 && start + length <= until {
            out.push(Self {
                start,
                end: start + length,
                lidar_var_scale: scale,
                lidar_bias_sigma: bias,
            });
            start += every;
        }
        out
    }
}

/// A synthetic trace layout with unconfident periods at a fixed cadence,
/// plus the attack starting points drawn from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoTraceSpec {
    pub duration: f64,
    /// No attack starts before this time.
    pub warmup: f64,
    pub period_first: f64,
    pub period_every: f64,
    pub period_length: f64,
    pub lidar_var_scale: f64,
    pub lidar_bias_sigma: f64,
    pub injection_seed: u64,
    pub start_spacing: f64,
}

impl Default for DemoTraceSpec {
    fn default() -> Self {
        crate::defaults::defaults().demo
    }
}

impl DemoTraceSpec {
    pub fn periods(&self) -> Vec<UnconfidentPeriod> {
        UnconfidentPeriod::periodic(
            self.period_first,
            self.period_every,
            self.period_length,
            self.duration,
            self.lidar_var_scale,
            self.lidar_bias_sigma,
        )
    }

    pub fn build(&self, scenario: &Scenario, noise: &NoiseModel) -> Result<Trace> {
        let base = generate_synthetic_trace(self.duration, scenario, noise)?;
        inject_unconfident_periods(&base, &self.periods(), self.injection_seed)
    }

    /// GPS epochs spaced `start_spacing` apart from the warm-up until
    /// `horizon` seconds before the end.
    pub fn start_times(&self, trace: &Trace, horizon: f64) -> Vec<f64> {
        let end = trace.end_time().unwrap_or(0.0);
        let mut next = self.warmup;
        let mut out = Vec::new();
        for t in trace.gps_times() {
            if t + horizon > end + 1e-9 {
                break;
            }
            if t + 1e-9 >= next {
                out.push(t);
                next = t + self.start_spacing;
            }
        }
        out
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

fn gauss2(rng: &mut ChaCha8Rng, sigma: f64) -> Vector2<f64> {
    let x = gauss(rng, sigma);
    Vector2::new(x, gauss(rng, sigma))
}

/// Emits IMU at 200 Hz, ground truth at 100 Hz, LiDAR at 5 Hz and GPS at
/// 1 Hz for a vehicle starting at the origin.
pub fn generate_synthetic_trace(duration: f64, scenario: &Scenario, noise: &NoiseModel) -> Result<Trace> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Argument(format!("duration must be > 0, got {duration}")));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let (s, c) = scenario.heading.sin_cos();
    let velocity = Vector2::new(c, s) * scenario.speed_mps;
    let n = (duration * IMU_RATE_HZ as f64).round() as u64;
    let gps_var = Vector2::repeat(noise.gps_var_nominal);
    let lidar_var = Vector2::repeat(noise.lidar_var_nominal);
    let mut events = Vec::with_capacity((n * 2) as usize);
    for i in 0..=n {
        let t = i as f64 / IMU_RATE_HZ as f64;
        let position = velocity * t;
        if i > 0 {
            let accel_body = gauss2(&mut rng, noise.imu_accel_sigma);
            let yaw_rate = gauss(&mut rng, noise.imu_gyro_sigma);
            events.push(TraceEvent {
                timestamp: t,
                payload: Payload::Imu { accel_body, yaw_rate },
            });
        }
        if i % TRUTH_EVERY == 0 {
            events.push(TraceEvent {
                timestamp: t,
                payload: Payload::Truth(GroundTruthPose {
                    position,
                    velocity,
                    heading: scenario.heading,
                    timestamp: t,
                }),
            });
        }
        if i > 0 && i % LIDAR_EVERY == 0 {
            events.push(TraceEvent {
                timestamp: t,
                payload: Payload::Lidar {
                    position: position + gauss2(&mut rng, noise.lidar_pos_sigma),
                    uncertainty: lidar_var,
                },
            });
        }
        if i > 0 && i % GPS_EVERY == 0 {
            events.push(TraceEvent {
                timestamp: t,
                payload: Payload::Gps {
                    position: position + gauss2(&mut rng, noise.gps_pos_sigma),
                    uncertainty: gps_var,
                },
            });
        }
    }
    Trace::from_sorted(events)
}

fn validate_periods(trace: &Trace, periods: &[UnconfidentPeriod]) -> Result<Vec<UnconfidentPeriod>> {
    let (t0, t1) = match (trace.start_time(), trace.end_time()) {
        (Some(a), Some(b)) => (a, b),
        _ if periods.is_empty() => (0.0, 0.0),
        _ => return Err(Error::validation("periods", "trace is empty")),
    };
    for (i, p) in periods.iter().enumerate() {
        let path = format!("periods[{i}]");
        if !(p.start < p.end) {
            return Err(Error::validation(path, "start must be < end"));
        }
        if !(p.lidar_var_scale >= 1.0) {
            return Err(Error::validation(path, "lidar_var_scale must be >= 1"));
        }
        if !(p.lidar_bias_sigma >= 0.0) {
            return Err(Error::validation(path, "lidar_bias_sigma must be >= 0"));
        }
        if p.start < t0 || p.end > t1 {
            return Err(Error::validation(path, "period lies outside the trace span"));
        }
    }
    let mut sorted = periods.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    if sorted.windows(2).any(|w| w[1].start <= w[0].end) {
        return Err(Error::validation("periods", "periods overlap"));
    }
    Ok(sorted)
}

/// Inflates LiDAR variances inside each period and offsets the fixes by a
/// per-period bias drawn once per period.
pub fn inject_unconfident_periods(trace: &Trace, periods: &[UnconfidentPeriod], seed: u64) -> Result<Trace> {
    let periods = validate_periods(trace, periods)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let biases: Vec<Vector2<f64>> = periods.iter().map(|p| gauss2(&mut rng, p.lidar_bias_sigma)).collect();
    let events = trace
        .events()
        .iter()
        .map(|e| match e.payload {
            Payload::Lidar { position, uncertainty } => {
                match periods.iter().position(|p| p.contains(e.timestamp)) {
                    Some(k) => TraceEvent {
                        timestamp: e.timestamp,
                        payload: Payload::Lidar {
                            position: position + biases[k],
                            uncertainty: uncertainty * periods[k].lidar_var_scale,
                        },
                    },
                    None => *e,
                }
            }
            _ => *e,
        })
        .collect();
    Trace::from_sorted(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise() -> NoiseModel {
        NoiseModel {
            gps_pos_sigma: 0.1,
            lidar_pos_sigma: 0.03,
            imu_accel_sigma: 0.05,
            imu_gyro_sigma: 0.001,
            gps_var_nominal: 0.01,
            lidar_var_nominal: 0.001,
            seed: 3,
        }
    }

    fn scenario() -> Scenario {
        Scenario {
            speed_mps: 20.1168,
            heading: 0.3,
        }
    }

    #[test]
    fn event_counts_for_ten_seconds() {
        let t = generate_synthetic_trace(10.0, &scenario(), &noise()).unwrap();
        assert_eq!(t.count("gps"), 10);
        assert_eq!(t.count("lidar"), 50);
        assert_eq!(t.count("imu"), 2000);
        assert_eq!(t.count("truth"), 1001);
    }

    #[test]
    fn noise_free_fixes_equal_truth() {
        let t = generate_synthetic_trace(5.0, &scenario(), &noise().noise_free()).unwrap();
        for e in t.events() {
            if let Payload::Gps { position, .. } | Payload::Lidar { position, .. } = e.payload {
                assert_eq!(position, t.truth_at(e.timestamp).unwrap().position);
            }
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = generate_synthetic_trace(5.0, &scenario(), &noise()).unwrap();
        let b = generate_synthetic_trace(5.0, &scenario(), &noise()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_trace(5.0, &scenario(), &NoiseModel { seed: 4, ..noise() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_duration() {
        assert!(generate_synthetic_trace(0.0, &scenario(), &noise()).is_err());
    }

    #[test]
    fn identity_injection() {
        let t = generate_synthetic_trace(20.0, &scenario(), &noise()).unwrap();
        let p = UnconfidentPeriod {
            start: 5.0,
            end: 10.0,
            lidar_var_scale: 1.0,
            lidar_bias_sigma: 0.0,
        };
        assert_eq!(inject_unconfident_periods(&t, &[p], 1).unwrap(), t);
    }

    #[test]
    fn scaled_window() {
        let t = generate_synthetic_trace(80.0, &scenario(), &noise()).unwrap();
        let p = UnconfidentPeriod {
            start: 60.0,
            end: 70.0,
            lidar_var_scale: 100.0,
            lidar_bias_sigma: 0.3,
        };
        let inj = inject_unconfident_periods(&t, &[p], 1).unwrap();
        assert_eq!(inj.len(), t.len());
        for (a, b) in t.events().iter().zip(inj.events()) {
            assert_eq!(a.payload.kind(), b.payload.kind());
            match (a.payload, b.payload) {
                (Payload::Lidar { uncertainty: u0, .. }, Payload::Lidar { uncertainty: u1, .. }) => {
                    if (60.0..=70.0).contains(&a.timestamp) {
                        assert_eq!(u1, u0 * 100.0);
                    } else {
                        assert_eq!(a, b);
                    }
                }
                _ => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn period_validation() {
        let t = generate_synthetic_trace(30.0, &scenario(), &noise()).unwrap();
        let p = |s: f64, e: f64| UnconfidentPeriod {
            start: s,
            end: e,
            lidar_var_scale: 10.0,
            lidar_bias_sigma: 0.1,
        };
        assert!(inject_unconfident_periods(&t, &[p(5.0, 10.0), p(8.0, 12.0)], 0).is_err());
        assert!(inject_unconfident_periods(&t, &[p(10.0, 5.0)], 0).is_err());
        assert!(inject_unconfident_periods(&t, &[p(25.0, 40.0)], 0).is_err());
        let mut low = p(1.0, 2.0);
        low.lidar_var_scale = 0.5;
        assert!(inject_unconfident_periods(&t, &[low], 0).is_err());
    }

    #[test]
    fn periodic_layout() {
        let ps = UnconfidentPeriod::periodic(30.0, 60.0, 12.0, 200.0, 100.0, 0.3);
        let starts: Vec<f64> = ps.iter().map(|p| p.start).collect();
        assert_eq!(starts, [30.0, 90.0, 150.0]);
    }

    #[test]
    fn bias_is_constant_within_a_period() {
        let t = generate_synthetic_trace(30.0, &scenario(), &noise().noise_free()).unwrap();
        let periods = [
            UnconfidentPeriod {
                start: 5.0,
                end: 10.0,
                lidar_var_scale: 100.0,
                lidar_bias_sigma: 0.3,
            },
            UnconfidentPeriod {
                start: 15.0,
                end: 20.0,
                lidar_var_scale: 100.0,
                lidar_bias_sigma: 0.3,
            },
        ];
        let out = inject_unconfident_periods(&t, &periods, 4).unwrap();
        let offsets = |p: &UnconfidentPeriod| -> Vec<Vector2<f64>> {
            out.events()
                .iter()
                .zip(t.events())
                .filter(|(e, _)| p.contains(e.timestamp))
                .filter_map(|(a, b)| match (a.payload, b.payload) {
                    (Payload::Lidar { position: pa, .. }, Payload::Lidar { position: pb, .. }) => Some(pa - pb),
                    _ => None,
                })
                .collect()
        };
        let first = offsets(&periods[0]);
        let second = offsets(&periods[1]);
        assert_eq!(first.len(), 26);
        assert!(first.iter().all(|o| (o - first[0]).norm() < 1e-12));
        assert!(second.iter().all(|o| (o - second[0]).norm() < 1e-12));
        assert!(first[0].norm() > 0.0);
        assert!((first[0] - second[0]).norm() > 1e-6);
    }
}
