//! Kalman-filter multi-sensor fusion over a planar 5-state
//! `[px, py, vx, vy, heading]`.
//!
//! IMU samples drive [`predict`]; GPS and LiDAR-locator position fixes drive
//! [`update`], gated by the innovation chi-squared statistic in
//! [`process_measurement`]. Every step re-symmetrizes the covariance.

use nalgebra::{Matrix2, Matrix5, SMatrix, Vector2, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::TransitionModel;

pub type Matrix2x5 = SMatrix<f64, 2, 5>;
pub type Matrix5x2 = SMatrix<f64, 5, 2>;

/// Fused vehicle estimate plus its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsfState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    /// Radians, normalized to (-pi, pi].
    pub heading: f64,
    pub covariance: Matrix5<f64>,
    pub timestamp: f64,
}

impl MsfState {
    pub fn new(
        position: Vector2<f64>,
        velocity: Vector2<f64>,
        heading: f64,
        covariance: Matrix5<f64>,
        timestamp: f64,
    ) -> Self {
        Self {
            position,
            velocity,
            heading: normalize_angle(heading),
            covariance,
            timestamp,
        }
    }

    pub fn vector(&self) -> Vector5<f64> {
        Vector5::new(
            self.position.x,
            self.position.y,
            self.velocity.x,
            self.velocity.y,
            self.heading,
        )
    }

    fn with_vector(&self, x: &Vector5<f64>, covariance: Matrix5<f64>) -> Self {
        Self {
            position: Vector2::new(x[0], x[1]),
            velocity: Vector2::new(x[2], x[3]),
            heading: normalize_angle(x[4]),
            covariance,
            timestamp: self.timestamp,
        }
    }

    pub fn covariance_trace(&self) -> f64 {
        self.covariance.trace()
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.vector().iter().all(|v| v.is_finite())
            && self.covariance.iter().all(|v| v.is_finite())
            && self.timestamp.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::NumericInput("state".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gps,
    Lidar,
    GpsSpoofed,
}

/// A position observation with a diagonal per-axis variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub source: Source,
    pub position: Vector2<f64>,
    /// Diagonal of R, in m^2.
    pub uncertainty: Vector2<f64>,
    pub timestamp: f64,
}

impl Measurement {
    pub fn new(
        source: Source,
        position: Vector2<f64>,
        uncertainty: Vector2<f64>,
        timestamp: f64,
    ) -> Self {
        Self {
            source,
            position,
            uncertainty,
            timestamp,
        }
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.uncertainty)
    }

    fn validate(&self) -> Result<()> {
        if !(self.position.iter().all(|v| v.is_finite()) && self.timestamp.is_finite()) {
            return Err(Error::NumericInput("measurement".into()));
        }
        if !self.uncertainty.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Argument(
                "measurement variances must be finite and strictly positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierPolicy {
    Discard,
    /// Apply the update with the innovation scaled by the weight in (0, 1).
    Partial(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfConfig {
    /// Continuous-time Q; prediction adds `Q * dt`.
    pub process_noise: Matrix5<f64>,
    pub observation_model: Matrix2x5,
    pub chi2_threshold: f64,
    pub outlier_policy: OutlierPolicy,
    /// Covariance assigned when a filter is initialized from a pose.
    pub initial_covariance: Matrix5<f64>,
}

impl KfConfig {
    pub fn position_observation() -> Matrix2x5 {
        let mut h = Matrix2x5::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h
    }

    pub fn from_diagonals(process_noise: [f64; 5], initial_covariance: [f64; 5]) -> Self {
        Self {
            process_noise: Matrix5::from_diagonal(&Vector5::from(process_noise)),
            observation_model: Self::position_observation(),
            chi2_threshold: 3.841,
            outlier_policy: OutlierPolicy::Discard,
            initial_covariance: Matrix5::from_diagonal(&Vector5::from(initial_covariance)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi2_threshold > 0.0) {
            return Err(Error::validation("kf.chi2_threshold", "must be > 0"));
        }
        if let OutlierPolicy::Partial(w) = self.outlier_policy {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::validation(
                    "kf.outlier_policy.partial",
                    "weight must lie in (0, 1)",
                ));
            }
        }
        if !self.process_noise.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("kf.process_noise", "must be finite"));
        }
        Ok(())
    }
}

impl Default for KfConfig {
    fn default() -> Self {
        crate::defaults::defaults().kf.to_config()
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfStepLog {
    pub kalman_gain: Matrix5x2,
    pub innovation: Vector2<f64>,
    pub innovation_covariance: Matrix2<f64>,
    pub chi2: f64,
    pub accepted: bool,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

fn symmetrize(p: &Matrix5<f64>) -> Matrix5<f64> {
    (p + p.transpose()) * 0.5
}

/// Linear prediction `x <- F x`, `P <- F P F^T + Q`.
pub fn kalman_predict(
    x: &Vector5<f64>,
    p: &Matrix5<f64>,
    f: &Matrix5<f64>,
    q: &Matrix5<f64>,
) -> (Vector5<f64>, Matrix5<f64>) {
    (f * x, symmetrize(&(f * p * f.transpose() + q)))
}

/// Jacobian of the kinematic map at `state` for the given IMU step.
pub fn transition_jacobian(state: &MsfState, tm: &TransitionModel) -> Matrix5<f64> {
    let (s, c) = state.heading.sin_cos();
    let drot = Matrix2::new(-s, -c, c, -s);
    let dv = drot * tm.accel_body * tm.dt;
    let mut f = Matrix5::identity();
    f[(0, 2)] = tm.dt;
    f[(1, 3)] = tm.dt;
    f[(2, 4)] = dv.x;
    f[(3, 4)] = dv.y;
    f
}

/// Advances the state through one IMU sample.
///
/// Explicit Euler on the prior state: the position moves with the prior
/// velocity, the velocity with the body acceleration rotated by the prior
/// heading, and the heading with the yaw rate.
pub fn predict(state: &MsfState, tm: &TransitionModel, config: &KfConfig) -> Result<MsfState> {
    tm.validate()?;
    state.check_finite()?;
    let (s, c) = state.heading.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    let f = transition_jacobian(state, tm);
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + config.process_noise * tm.dt));
    Ok(MsfState {
        position: state.position + state.velocity * tm.dt,
        velocity: state.velocity + rot * tm.accel_body * tm.dt,
        heading: normalize_angle(state.heading + tm.yaw_rate * tm.dt),
        covariance,
        timestamp: state.timestamp + tm.dt,
    })
}

struct Innovation {
    residual: Vector2<f64>,
    s: Matrix2<f64>,
    s_inv: Matrix2<f64>,
    chi2: f64,
}

fn innovation(state: &MsfState, meas: &Measurement, config: &KfConfig) -> Result<Innovation> {
    meas.validate()?;
    state.check_finite()?;
    let h = &config.observation_model;
    let residual = meas.position - h * state.vector();
    let s = h * state.covariance * h.transpose() + meas.covariance();
    let s = (s + s.transpose()) * 0.5;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("innovation covariance is not positive definite".into()))?;
    let s_inv = chol.inverse();
    let chi2 = (residual.transpose() * s_inv * residual)[(0, 0)].max(0.0);
    Ok(Innovation {
        residual,
        s,
        s_inv,
        chi2,
    })
}

/// Innovation chi-squared statistic `(z - Hx)^T S^-1 (z - Hx)`.
pub fn chi_squared(state: &MsfState, meas: &Measurement, config: &KfConfig) -> Result<f64> {
    Ok(innovation(state, meas, config)?.chi2)
}

fn apply_update(
    state: &MsfState,
    meas: &Measurement,
    config: &KfConfig,
    inn: &Innovation,
    weight: f64,
) -> (MsfState, KfStepLog) {
    let h = &config.observation_model;
    let gain: Matrix5x2 = state.covariance * h.transpose() * inn.s_inv;
    let wk = gain * weight;
    let x = state.vector() + wk * inn.residual;
    // Joseph form; equals P - KHP for the optimal gain and stays PSD for w < 1.
    let i_kh = Matrix5::identity() - wk * h;
    let p = i_kh * state.covariance * i_kh.transpose() + wk * meas.covariance() * wk.transpose();
    let next = state.with_vector(&x, symmetrize(&p));
    let log = KfStepLog {
        kalman_gain: gain,
        innovation: inn.residual,
        innovation_covariance: inn.s,
        chi2: inn.chi2,
        accepted: true,
    };
    (next, log)
}

/// Full Kalman update, no gating.
pub fn update(state: &MsfState, meas: &Measurement, config: &KfConfig) -> Result<(MsfState, KfStepLog)> {
    let inn = innovation(state, meas, config)?;
    Ok(apply_update(state, meas, config, &inn, 1.0))
}

/// Gated update: accepted when chi2 <= threshold, otherwise handled per
/// [`OutlierPolicy`].
pub fn process_measurement(
    state: &MsfState,
    meas: &Measurement,
    config: &KfConfig,
) -> Result<(MsfState, KfStepLog)> {
    let inn = innovation(state, meas, config)?;
    if inn.chi2 <= config.chi2_threshold {
        return Ok(apply_update(state, meas, config, &inn, 1.0));
    }
    match config.outlier_policy {
        OutlierPolicy::Discard => {
            let gain = state.covariance * config.observation_model.transpose() * inn.s_inv;
            Ok((
                *state,
                KfStepLog {
                    kalman_gain: gain,
                    innovation: inn.residual,
                    innovation_covariance: inn.s,
                    chi2: inn.chi2,
                    accepted: false,
                },
            ))
        }
        OutlierPolicy::Partial(w) => {
            let (next, mut log) = apply_update(state, meas, config, &inn, w);
            log.accepted = false;
            Ok((next, log))
        }
    }
}

/// A running filter instance: state plus the latest IMU sample, which is
/// held to bridge gaps before a measurement.
#[derive(Debug, Clone)]
pub struct MsfFilter {
    state: MsfState,
    last_accel: Vector2<f64>,
    last_yaw_rate: f64,
}

impl MsfFilter {
    pub fn new(state: MsfState) -> Self {
        Self {
            state,
            last_accel: Vector2::zeros(),
            last_yaw_rate: 0.0,
        }
    }

    pub fn state(&self) -> &MsfState {
        &self.state
    }

    pub fn position(&self) -> Vector2<f64> {
        self.state.position
    }

    /// Integrates an IMU sample stamped `t`, covering `(state.t, t]`.
    pub fn on_imu(&mut self, t: f64, accel_body: Vector2<f64>, yaw_rate: f64, config: &KfConfig) -> Result<()> {
        self.last_accel = accel_body;
        self.last_yaw_rate = yaw_rate;
        let dt = t - self.state.timestamp;
        if dt > 0.0 {
            let tm = TransitionModel::new(accel_body, yaw_rate, dt);
            let mut next = predict(&self.state, &tm, config)?;
            next.timestamp = t;
            self.state = next;
        }
        Ok(())
    }

    /// Predicts forward to `t` with the last IMU sample held.
    pub fn catch_up_to(&mut self, t: f64, config: &KfConfig) -> Result<()> {
        let dt = t - self.state.timestamp;
        if dt > 1e-9 {
            let tm = TransitionModel::new(self.last_accel, self.last_yaw_rate, dt);
            let mut next = predict(&self.state, &tm, config)?;
            next.timestamp = t;
            self.state = next;
        }
        Ok(())
    }

    /// Gated measurement update.
    pub fn on_measurement(&mut self, meas: &Measurement, config: &KfConfig) -> Result<KfStepLog> {
        self.catch_up_to(meas.timestamp, config)?;
        let (next, log) = process_measurement(&self.state, meas, config)?;
        self.state = next;
        Ok(log)
    }
}
