//! Closed-form deviations of a two-spoof pipeline: spoofed GPS update, one
//! IMU prediction, one LiDAR update, spoofed GPS update.
//!
//! Deviations are taken against a reference pipeline that sees no spoofing
//! and whose measurements match its own predictions, so the reference
//! estimate never moves. `delta_lidar` is the offset of that reference from
//! the LiDAR fix (LiDAR = H x_ref - delta_lidar).

use nalgebra::{Matrix2, Matrix5, Vector2, Vector5};

use crate::error::{Error, Result};
use crate::msf::{Matrix2x5, Matrix5x2};

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormInputs {
    pub p0: Matrix5<f64>,
    pub r1: Matrix2<f64>,
    pub r1_lidar: Matrix2<f64>,
    pub r2: Matrix2<f64>,
    pub delta1: Vector2<f64>,
    pub delta2: Vector2<f64>,
    pub delta_lidar: Vector2<f64>,
    pub f1: Matrix5<f64>,
    pub h: Matrix2x5,
    /// Process noise added by the prediction step.
    pub q: Matrix5<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormDevs {
    pub dev1: Vector5<f64>,
    pub dev_imu: Vector5<f64>,
    pub dev_lidar: Vector5<f64>,
    pub dev2: Vector5<f64>,
}

fn gain(p: &Matrix5<f64>, h: &Matrix2x5, r: &Matrix2<f64>) -> Result<Matrix5x2> {
    let s = h * p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::LinearAlgebra("singular innovation covariance".into()))?;
    Ok(p * h.transpose() * s_inv)
}

fn contract(p: &Matrix5<f64>, k: &Matrix5x2, h: &Matrix2x5) -> Matrix5<f64> {
    (Matrix5::identity() - k * h) * p
}

pub fn closed_form_dev2(inp: &ClosedFormInputs) -> Result<ClosedFormDevs> {
    let h = &inp.h;
    let k1 = gain(&inp.p0, h, &inp.r1)?;
    let p1 = contract(&inp.p0, &k1, h);
    let p_imu = inp.f1 * p1 * inp.f1.transpose() + inp.q;
    let k_lidar = gain(&p_imu, h, &inp.r1_lidar)?;
    let p_lidar = contract(&p_imu, &k_lidar, h);
    let k2 = gain(&p_lidar, h, &inp.r2)?;

    let dev1 = k1 * inp.delta1;
    let dev_imu = inp.f1 * dev1;
    let dev_lidar = dev_imu - k_lidar * (inp.delta_lidar + h * dev_imu);
    let dev2 = dev_lidar + k2 * (inp.delta2 - h * dev_lidar);
    Ok(ClosedFormDevs {
        dev1,
        dev_imu,
        dev_lidar,
        dev2,
    })
}
