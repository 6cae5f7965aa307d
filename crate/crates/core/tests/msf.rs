//! Filter invariants over random states and measurements.

use nalgebra::{Matrix2, Matrix5, SMatrix, SymmetricEigen, Vector2};
use proptest::prelude::*;

use msf_spoof::msf::{
    chi_squared, predict, process_measurement, update, KfConfig, Measurement, MsfState, OutlierPolicy, Source,
};
use msf_spoof::vehicle::TransitionModel;

fn cfg() -> KfConfig {
    KfConfig::from_diagonals([0.03, 0.03, 0.015, 0.015, 1e-6], [0.01; 5])
}

fn min_eigenvalue(p: &Matrix5<f64>) -> f64 {
    SymmetricEigen::new(*p).eigenvalues.min()
}

fn is_symmetric(p: &Matrix5<f64>) -> bool {
    (p - p.transpose()).amax() <= 1e-12 * p.amax().max(1.0)
}

prop_compose! {
    fn covariance()(entries in prop::collection::vec(-1.0f64..1.0, 25), ridge in 1e-4f64..0.5) -> Matrix5<f64> {
        let a = SMatrix::<f64, 5, 5>::from_row_slice(&entries);
        a * a.transpose() + Matrix5::identity() * ridge
    }
}

prop_compose! {
    fn state()(
        p in covariance(),
        pos in prop::array::uniform2(-50.0f64..50.0),
        vel in prop::array::uniform2(-25.0f64..25.0),
        heading in -3.1f64..3.1,
    ) -> MsfState {
        MsfState::new(Vector2::from(pos), Vector2::from(vel), heading, p, 0.0)
    }
}

prop_compose! {
    fn measurement_near(state: MsfState)(
        off in prop::array::uniform2(-3.0f64..3.0),
        var in prop::array::uniform2(1e-4f64..2.0),
    ) -> Measurement {
        Measurement::new(Source::Gps, state.position + Vector2::from(off), Vector2::from(var), 0.0)
    }
}

fn state_and_measurement() -> impl Strategy<Value = (MsfState, Measurement)> {
    state().prop_flat_map(|s| (Just(s), measurement_near(s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn prediction_keeps_covariance_psd(
        s in state(),
        accel in prop::array::uniform2(-3.0f64..3.0),
        yaw in -0.5f64..0.5,
        dt in 1e-3f64..0.5,
    ) {
        let next = predict(&s, &TransitionModel::new(Vector2::from(accel), yaw, dt), &cfg()).unwrap();
        prop_assert!(is_symmetric(&next.covariance));
        prop_assert!(min_eigenvalue(&next.covariance) >= -1e-9);
    }

    #[test]
    fn update_keeps_covariance_psd_and_shrinks_trace((s, m) in state_and_measurement()) {
        let (next, _) = update(&s, &m, &cfg()).unwrap();
        prop_assert!(is_symmetric(&next.covariance));
        prop_assert!(min_eigenvalue(&next.covariance) >= -1e-9);
        prop_assert!(next.covariance.trace() <= s.covariance.trace() + 1e-12);
    }

    #[test]
    fn partial_update_keeps_covariance_psd((s, m) in state_and_measurement(), w in 0.01f64..0.99) {
        let c = KfConfig { outlier_policy: OutlierPolicy::Partial(w), chi2_threshold: 1e-9, ..cfg() };
        let (next, log) = process_measurement(&s, &m, &c).unwrap();
        prop_assume!(!log.accepted);
        prop_assert!(min_eigenvalue(&next.covariance) >= -1e-9);
    }

    #[test]
    fn tighter_measurements_pull_harder((s, m) in state_and_measurement(), shrink in 0.05f64..0.95) {
        let tight = Measurement { uncertainty: m.uncertainty * shrink, ..m };
        let (loose_state, _) = update(&s, &m, &cfg()).unwrap();
        let (tight_state, _) = update(&s, &tight, &cfg()).unwrap();
        let d_loose = (loose_state.position - m.position).norm();
        let d_tight = (tight_state.position - m.position).norm();
        prop_assert!(d_tight <= d_loose + 1e-12, "{d_tight} > {d_loose}");
        if (m.position - s.position).norm() > 1e-6 {
            prop_assert!(d_tight < d_loose);
        }
    }

    #[test]
    fn discarded_outliers_leave_the_state_untouched((s, m) in state_and_measurement()) {
        let c = KfConfig { chi2_threshold: 1e-6, ..cfg() };
        let (next, log) = process_measurement(&s, &m, &c).unwrap();
        if log.accepted {
            prop_assert!(log.chi2 <= c.chi2_threshold);
        } else {
            prop_assert_eq!(next, s);
        }
    }

    #[test]
    fn gate_decision_follows_chi2((s, m) in state_and_measurement()) {
        let c = cfg();
        let chi2 = chi_squared(&s, &m, &c).unwrap();
        let (_, log) = process_measurement(&s, &m, &c).unwrap();
        prop_assert_eq!(log.accepted, chi2 <= c.chi2_threshold);
        prop_assert!((log.chi2 - chi2).abs() <= 1e-12 * chi2.max(1.0));
    }

    #[test]
    fn chi2_is_frame_independent(
        (s, m) in state_and_measurement(),
        angle in -3.1f64..3.1,
        var in 1e-3f64..1.0,
    ) {
        let iso = Measurement { uncertainty: Vector2::repeat(var), ..m };
        let rot = Matrix2::new(angle.cos(), -angle.sin(), angle.sin(), angle.cos());
        let mut t = Matrix5::identity();
        t.fixed_view_mut::<2, 2>(0, 0).copy_from(&rot);
        t.fixed_view_mut::<2, 2>(2, 2).copy_from(&rot);
        let rotated = MsfState::new(
            rot * s.position,
            rot * s.velocity,
            s.heading + angle,
            t * s.covariance * t.transpose(),
            s.timestamp,
        );
        let rotated_meas = Measurement { position: rot * iso.position, ..iso };
        let a = chi_squared(&s, &iso, &cfg()).unwrap();
        let b = chi_squared(&rotated, &rotated_meas, &cfg()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn non_finite_inputs_are_rejected() {
    let s = MsfState::new(Vector2::zeros(), Vector2::zeros(), 0.0, Matrix5::identity(), 0.0);
    let bad = Measurement::new(Source::Gps, Vector2::new(f64::NAN, 0.0), Vector2::repeat(0.1), 0.0);
    assert!(update(&s, &bad, &cfg()).is_err());
    let zero_var = Measurement::new(Source::Gps, Vector2::zeros(), Vector2::new(0.0, 0.1), 0.0);
    assert!(update(&s, &zero_var, &cfg()).is_err());
    let tm = TransitionModel::new(Vector2::zeros(), 0.0, -0.1);
    assert!(predict(&s, &tm, &cfg()).is_err());
}
