//! Reference implementations shared by several test targets.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix5, SMatrix, Vector2, Vector5};
use proptest::prelude::*;

use msf_spoof::analysis::{ClosedFormDevs, ClosedFormInputs};
use msf_spoof::msf::{kalman_predict, normalize_angle, update, KfConfig, Measurement, MsfState, Source};

type Mat55 = SMatrix<f64, 5, 5>;

fn pd5(entries: &[f64], ridge: f64) -> Matrix5<f64> {
    let mut a = Mat55::from_row_slice(entries);
    // Keeps heading deviations well inside one turn.
    a.row_mut(4).scale_mut(0.2);
    a * a.transpose() + Matrix5::identity() * ridge
}

fn state(x: &Vector5<f64>, p: Matrix5<f64>) -> MsfState {
    MsfState::new(Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]), x[4], p, 0.0)
}

/// Runs attacked and reference filters through GPS, prediction, LiDAR,
/// GPS, with the reference seeing measurements equal to its own prediction.
pub fn simulate_two_spoofs(inp: &ClosedFormInputs, x_ref: &Vector5<f64>) -> [Vector5<f64>; 4] {
    let cfg = KfConfig {
        observation_model: inp.h,
        ..KfConfig::default()
    };
    let h = inp.h;
    // Measurements carry diagonal variances, so the drawn R are diagonal.
    let meas = |z: Vector2<f64>, r: &Matrix2<f64>| Measurement::new(Source::Gps, z, r.diagonal(), 0.0);

    let s0 = state(x_ref, inp.p0);
    let (s1, _) = update(&s0, &meas(h * x_ref + inp.delta1, &inp.r1), &cfg).unwrap();
    let dev1 = s1.vector() - x_ref;

    let (x_imu, p_imu) = kalman_predict(&s1.vector(), &s1.covariance, &inp.f1, &inp.q);
    let ref_imu = inp.f1 * x_ref;
    let dev_imu = x_imu - ref_imu;

    let s_imu = state(&x_imu, p_imu);
    let lidar = h * ref_imu - inp.delta_lidar;
    let (s_lidar, _) = update(&s_imu, &meas(lidar, &inp.r1_lidar), &cfg).unwrap();
    let dev_lidar = s_lidar.vector() - ref_imu;

    let (s2, _) = update(&s_lidar, &meas(h * ref_imu + inp.delta2, &inp.r2), &cfg).unwrap();
    let dev2 = s2.vector() - ref_imu;
    [dev1, dev_imu, dev_lidar, dev2]
}

/// True when the attacked heading leaves (-pi, pi] at some step, where the
/// filter wraps it and the linear recursion does not.
pub fn heading_wraps(cf: &ClosedFormDevs, inp: &ClosedFormInputs, x_ref: &Vector5<f64>) -> bool {
    let r = inp.f1 * x_ref;
    [(cf.dev1, *x_ref), (cf.dev_imu, r), (cf.dev_lidar, r), (cf.dev2, r)]
        .iter()
        .any(|(d, x)| (d[4] + x[4]).abs() >= std::f64::consts::PI)
}

/// Largest absolute component difference between the closed form and the
/// simulation, with heading differences taken modulo a full turn.
pub fn closed_form_error(cf: &ClosedFormDevs, sim: &[Vector5<f64>; 4]) -> f64 {
    [cf.dev1, cf.dev_imu, cf.dev_lidar, cf.dev2]
        .iter()
        .zip(sim)
        .map(|(a, b)| {
            let mut diff = a - b;
            diff[4] = normalize_angle(diff[4]);
            diff.amax()
        })
        .fold(0.0, f64::max)
}

fn vec_strategy(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

prop_compose! {
    pub fn closed_form_inputs()(
        p0 in vec_strategy(25, -0.6, 0.6),
        r in vec_strategy(6, 0.005, 0.5),
        f in vec_strategy(25, -0.05, 0.05),
        q in vec_strategy(25, -0.1, 0.1),
        deltas in vec_strategy(6, -3.0, 3.0),
        x in vec_strategy(5, -0.5, 0.5),
    ) -> (ClosedFormInputs, Vector5<f64>) {
        let mut f1 = Matrix5::identity() + Mat55::from_row_slice(&f);
        f1[(0, 2)] += 0.01;
        f1[(1, 3)] += 0.01;
        let inp = ClosedFormInputs {
            p0: pd5(&p0, 0.05),
            r1: Matrix2::from_diagonal(&Vector2::new(r[0], r[1])),
            r1_lidar: Matrix2::from_diagonal(&Vector2::new(r[2], r[3])),
            r2: Matrix2::from_diagonal(&Vector2::new(r[4], r[5])),
            delta1: Vector2::new(deltas[0], deltas[1]),
            delta2: Vector2::new(deltas[2], deltas[3]),
            delta_lidar: Vector2::new(deltas[4], deltas[5]),
            f1,
            h: KfConfig::position_observation(),
            q: pd5(&q, 1e-4),
        };
        (inp, Vector5::from_column_slice(&x))
    }
}

fn choose(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Two-sided Fisher p by exact enumeration of all tables with the observed
/// margins, counting tables whose probability does not exceed the observed one.
pub fn fisher_reference(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let weight = |x: u64| choose(r1, x) * choose(r2, c1 - x);
    let observed = weight(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let total: u128 = (lo..=hi).map(weight).sum();
    let tail: u128 = (lo..=hi).map(weight).filter(|w| *w <= observed).sum();
    tail as f64 / total as f64
}

/// Every 2x2 table whose row and column sums are at most `max_margin`.
pub fn small_tables(max_margin: u64) -> impl Iterator<Item = [[u64; 2]; 2]> {
    let m = max_margin;
    (0..=m).flat_map(move |a| {
        (0..=m - a).flat_map(move |b| {
            (0..=m - a).flat_map(move |c| (0..=(m - b).min(m - c)).map(move |d| [[a, b], [c, d]]))
        })
    })
}

/// Compares the library Fisher test with enumeration on every small table.
/// Returns the number of tables with a defined p value, or the first mismatch.
pub fn check_fisher_on_small_tables(max_margin: u64) -> Result<usize, String> {
    let mut checked = 0;
    for t in small_tables(max_margin) {
        let [[a, b], [c, d]] = t;
        let degenerate = a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0;
        match (degenerate, msf_spoof::analysis::fisher_exact(t)) {
            (true, Err(_)) => {}
            (true, Ok(r)) => return Err(format!("{t:?}: expected an error, got p {}", r.p)),
            (false, Err(e)) => return Err(format!("{t:?}: {e}")),
            (false, Ok(r)) => {
                let want = fisher_reference(t);
                if !((r.p - want).abs() <= 1e-9 * want + 1e-15 && r.p > 0.0 && r.p <= 1.0) {
                    return Err(format!("{t:?}: {} vs {want}", r.p));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
