//! Planar vehicle kinematics, the steering-to-pose conversion and a
//! proportional lateral controller.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::normalize_angle;
use crate::trace::GroundTruthPose;

/// One IMU sample interpreted as a transition over `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    /// Body-frame acceleration, m/s^2.
    pub accel_body: Vector2<f64>,
    pub yaw_rate: f64,
    pub dt: f64,
}

impl TransitionModel {
    pub fn new(accel_body: Vector2<f64>, yaw_rate: f64, dt: f64) -> Self {
        Self {
            accel_body,
            yaw_rate,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accel_body.iter().all(|v| v.is_finite()) && self.yaw_rate.is_finite() && self.dt.is_finite()) {
            return Err(Error::NumericInput("transition".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Argument(format!("transition dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// rad of steering per meter of lateral deviation.
    pub gain_lateral: f64,
    /// rad of steering per rad of heading error.
    pub gain_heading: f64,
    pub steering_ratio: f64,
    pub cycle_time: f64,
    pub max_steering: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        crate::defaults::defaults().controller
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("controller.steering_ratio", self.steering_ratio > 0.0),
            ("controller.cycle_time", self.cycle_time > 0.0),
            ("controller.gain_lateral", self.gain_lateral >= 0.0),
            ("controller.gain_heading", self.gain_heading >= 0.0),
            ("controller.max_steering", self.max_steering > 0.0),
        ];
        for (path, ok) in checks {
            if !ok {
                return Err(Error::validation(path, "out of range"));
            }
        }
        Ok(())
    }
}

/// Lateral position change over one controller cycle and the heading rate
/// that realizes the wheel angle `theta / steering_ratio` within that cycle.
pub fn steering_to_pose_delta(v: f64, cfg: &ControllerConfig, theta: f64) -> Result<(f64, f64)> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Argument(format!("speed must be finite and >= 0, got {v}")));
    }
    if !(theta.abs() <= cfg.max_steering) {
        return Err(Error::Argument(format!(
            "steering {theta} exceeds max_steering {}",
            cfg.max_steering
        )));
    }
    let wheel = theta / cfg.steering_ratio;
    Ok((v * cfg.cycle_time * wheel.sin(), wheel / cfg.cycle_time))
}

/// Proportional steering law opposing lateral deviation (positive = left)
/// and heading error.
pub fn lateral_controller(lateral_dev: f64, heading_err: f64, cfg: &ControllerConfig) -> f64 {
    let raw = -cfg.gain_lateral * lateral_dev - cfg.gain_heading * heading_err;
    raw.clamp(-cfg.max_steering, cfg.max_steering)
}

/// Noise-free forward kinematics, the same map the filter uses to predict.
pub fn integrate_pose(pose: &GroundTruthPose, tm: &TransitionModel) -> Result<GroundTruthPose> {
    tm.validate()?;
    let (s, c) = pose.heading.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    Ok(GroundTruthPose {
        position: pose.position + pose.velocity * tm.dt,
        velocity: pose.velocity + rot * tm.accel_body * tm.dt,
        heading: normalize_angle(pose.heading + tm.yaw_rate * tm.dt),
        timestamp: pose.timestamp + tm.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn cfg() -> ControllerConfig {
        ControllerConfig {
            gain_lateral: 0.2,
            gain_heading: 0.0,
            steering_ratio: 16.0,
            cycle_time: 0.01,
            max_steering: 8.0,
        }
    }

    #[test]
    fn straight_steering_is_zero() {
        assert_eq!(steering_to_pose_delta(10.0, &cfg(), 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn steering_is_odd() {
        let (a, b) = steering_to_pose_delta(12.0, &cfg(), 0.7).unwrap();
        let (c, d) = steering_to_pose_delta(12.0, &cfg(), -0.7).unwrap();
        assert_eq!((a, b), (-c, -d));
    }

    #[test]
    fn steering_hand_example() {
        let (lat, rate) = steering_to_pose_delta(10.0, &cfg(), 1.6).unwrap();
        assert_relative_eq!(lat, 0.1 * 0.1f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(lat, 9.983e-3, epsilon = 1e-6);
        assert_relative_eq!(rate, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_preconditions() {
        assert!(steering_to_pose_delta(-1.0, &cfg(), 0.1).is_err());
        assert!(steering_to_pose_delta(1.0, &cfg(), 9.0).is_err());
    }

    #[test]
    fn steering_monotone_in_theta() {
        let c = ControllerConfig {
            max_steering: 16.0 * FRAC_PI_2,
            ..cfg()
        };
        let mut prev = -1.0;
        for k in 0..200 {
            let theta = k as f64 / 200.0 * c.steering_ratio * FRAC_PI_2 * 0.999;
            let (lat, _) = steering_to_pose_delta(20.0, &c, theta).unwrap();
            assert!(lat > prev);
            prev = lat;
        }
    }

    #[test]
    fn controller_law() {
        assert_eq!(lateral_controller(0.0, 0.0, &cfg()), 0.0);
        assert_relative_eq!(lateral_controller(1.0, 0.0, &cfg()), -0.2);
        assert_eq!(lateral_controller(1e6, 0.0, &cfg()), -8.0);
        assert_eq!(lateral_controller(-1e6, 0.0, &cfg()), 8.0);
    }

    #[test]
    fn default_loop_recovers_from_offset() {
        // Lane-frame loop: heading offset follows the wheel angle each cycle.
        let c = ControllerConfig::default();
        let v = 20.1168;
        let (mut y, mut psi) = (1.0f64, 0.0f64);
        let steps = (10.0 / c.cycle_time) as usize;
        for _ in 0..steps {
            let theta = lateral_controller(y, psi, &c);
            let (_, rate) = steering_to_pose_delta(v, &c, theta).unwrap();
            psi = rate * c.cycle_time;
            y += v * c.cycle_time * psi.sin();
        }
        assert!(y.abs() < 0.05, "residual {y}");
    }

    fn pose() -> GroundTruthPose {
        GroundTruthPose {
            position: Vector2::zeros(),
            velocity: Vector2::new(20.1168, 0.0),
            heading: 0.0,
            timestamp: 0.0,
        }
    }

    #[test]
    fn constant_velocity_advance() {
        let p = integrate_pose(&pose(), &TransitionModel::new(Vector2::zeros(), 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.position.x, 20.1168, epsilon = 1e-12);
        assert_eq!(p.position.y, 0.0);
    }

    #[test]
    fn yaw_rotation() {
        let p = integrate_pose(&pose(), &TransitionModel::new(Vector2::zeros(), FRAC_PI_2, 1.0)).unwrap();
        assert_relative_eq!(p.heading, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn half_steps_match_full_step() {
        let tm = TransitionModel::new(Vector2::new(0.8, -0.4), 0.3, 0.005);
        let half = TransitionModel { dt: 0.0025, ..tm };
        let one = integrate_pose(&pose(), &tm).unwrap();
        let two = integrate_pose(&integrate_pose(&pose(), &half).unwrap(), &half).unwrap();
        assert!((one.position - two.position).norm() < 1e-4);
        assert!((one.velocity - two.velocity).norm() < 1e-4);
        assert!((one.heading - two.heading).abs() < 1e-4);
    }
}
