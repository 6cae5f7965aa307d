//! Attack engine behavior on synthetic traces.

use std::sync::Arc;

use nalgebra::Vector2;
use proptest::prelude::*;

use msf_spoof::analysis::{goal_thresholds, success_metrics, RoadGeometry};
use msf_spoof::attack::{run_baseline, AttackBench, RunOptions, Side, Strategy};
use msf_spoof::msf::KfConfig;
use msf_spoof::profiler::{safe_trial_outcome, ProfilingConfig};
use msf_spoof::trace::{
    generate_synthetic_trace, DemoTraceSpec, GroundTruthPose, NoiseModel, Payload, Scenario, Trace, TraceEvent,
};

fn scenario() -> Scenario {
    Scenario::default()
}

fn noise_free_trace(duration: f64) -> Trace {
    generate_synthetic_trace(duration, &scenario(), &NoiseModel::default().noise_free()).unwrap()
}

fn demo_trace(duration: f64) -> Trace {
    let spec = DemoTraceSpec {
        duration,
        ..DemoTraceSpec::default()
    };
    spec.build(&scenario(), &NoiseModel::default()).unwrap()
}

fn bench(trace: Trace) -> AttackBench {
    AttackBench::new(Arc::new(trace), KfConfig::default()).unwrap()
}

/// Reflects every event about the lane axis (the x axis for heading 0).
fn mirror(trace: &Trace) -> Trace {
    let flip = |v: Vector2<f64>| Vector2::new(v.x, -v.y);
    let events = trace
        .events()
        .iter()
        .map(|e| TraceEvent {
            timestamp: e.timestamp,
            payload: match e.payload {
                Payload::Imu { accel_body, yaw_rate } => Payload::Imu {
                    accel_body: flip(accel_body),
                    yaw_rate: -yaw_rate,
                },
                Payload::Gps { position, uncertainty } => Payload::Gps {
                    position: flip(position),
                    uncertainty,
                },
                Payload::Lidar { position, uncertainty } => Payload::Lidar {
                    position: flip(position),
                    uncertainty,
                },
                Payload::Truth(p) => Payload::Truth(GroundTruthPose {
                    position: flip(p.position),
                    velocity: flip(p.velocity),
                    heading: -p.heading,
                    timestamp: p.timestamp,
                }),
            },
        })
        .collect();
    Trace::new(events).unwrap()
}

#[test]
fn noise_free_pipeline_tracks_truth() {
    let trace = noise_free_trace(120.0);
    let kf = KfConfig::default();
    let mut worst: f64 = 0.0;
    for (t, s) in run_baseline(&trace, &kf).unwrap() {
        if t >= 5.0 {
            let truth = trace.truth_at(t).unwrap();
            worst = worst.max((s.position - truth.position).norm());
        }
    }
    assert!(worst < 1e-3, "max tracking error {worst}");
}

#[test]
fn noisy_pipeline_tracks_truth_within_five_centimeters_rms() {
    let trace = generate_synthetic_trace(300.0, &scenario(), &NoiseModel::default()).unwrap();
    let kf = KfConfig::default();
    let (mut se, mut n) = (0.0, 0usize);
    for (t, s) in run_baseline(&trace, &kf).unwrap() {
        if t >= 5.0 {
            se += (s.position - trace.truth_at(t).unwrap().position).norm_squared();
            n += 1;
        }
    }
    let rms = (se / n as f64).sqrt();
    assert!(rms < 0.05, "rms {rms}");
}

#[test]
fn zero_distance_attack_reproduces_the_baseline() {
    let trace = noise_free_trace(60.0);
    let b = bench(trace.clone());
    let mut cfg = b.attack_config(1.0, 1.5, Side::Left);
    cfg.max_duration = 40.0;
    let out = b
        .run(10.0, &cfg, &RunOptions::new(Strategy::Scripted(vec![0.0; 60])))
        .unwrap();
    assert!(!out.deviation_series.is_empty());
    for (t, dev) in &out.deviation_series {
        assert!(dev.abs() < 1e-12, "deviation {dev} at {t}");
    }
    assert_eq!(out.stage2_time, None);
    assert!(out.spoof_log.iter().all(|r| r.accepted));
}

#[test]
fn mirrored_trace_mirrors_the_attack() {
    let trace = demo_trace(150.0);
    let left = bench(trace.clone());
    let right = bench(mirror(&trace));
    for start in [25.0, 40.0, 85.0] {
        let a = left.fusion_ripper(start, &left.attack_config(0.6, 1.3, Side::Left)).unwrap();
        let b = right.fusion_ripper(start, &right.attack_config(0.6, 1.3, Side::Right)).unwrap();
        assert_eq!(a.deviation_series.len(), b.deviation_series.len());
        for ((ta, da), (tb, db)) in a.deviation_series.iter().zip(&b.deviation_series) {
            assert_eq!(ta, tb);
            assert!((da - db).abs() < 1e-6, "{da} vs {db} at {ta}");
        }
        assert_eq!(a.stage2_time, b.stage2_time);
    }
}

#[test]
fn side_reverses_the_deviation_sign() {
    let trace = demo_trace(150.0);
    let b = bench(trace);
    let out = b.fusion_ripper(25.0, &b.attack_config(0.6, 1.3, Side::Left)).unwrap();
    assert!(out.spoof_log.iter().all(|r| r.delta > 0.0));
    let out = b.fusion_ripper(25.0, &b.attack_config(0.6, 1.3, Side::Right)).unwrap();
    assert!(out.spoof_log.iter().all(|r| r.delta < 0.0));
}

#[test]
fn stage_two_distances_grow_strictly() {
    let b = bench(demo_trace(150.0));
    let mut triggered = 0;
    for start in [20.0, 25.0, 80.0, 85.0] {
        for f in [1.1, 1.5, 2.0] {
            let out = b.fusion_ripper(start, &b.attack_config(0.5, f, Side::Left)).unwrap();
            let Some(t2) = out.stage2_time else { continue };
            triggered += 1;
            let after: Vec<f64> = out.spoof_log.iter().filter(|r| r.t > t2).map(|r| r.delta).collect();
            assert!(after.len() > 1);
            assert!((after[0] - 0.5).abs() < 1e-12, "exponent restarts at zero");
            assert!(after.windows(2).all(|w| w[1] > w[0]));
            for (i, w) in after.windows(2).enumerate() {
                assert!((w[1] / w[0] - f).abs() < 1e-9, "ratio at {i}");
            }
        }
    }
    assert!(triggered > 0, "no run reached the trigger");
}

#[test]
fn before_the_trigger_the_distance_is_constant() {
    let b = bench(demo_trace(150.0));
    let out = b.fusion_ripper(15.0, &b.attack_config(0.7, 1.4, Side::Left)).unwrap();
    let t2 = out.stage2_time.unwrap_or(f64::INFINITY);
    for r in out.spoof_log.iter().filter(|r| r.t <= t2) {
        assert_eq!(r.delta, 0.7);
    }
}

#[test]
fn gated_spoofs_are_logged_as_rejected() {
    let b = bench(demo_trace(150.0));
    let threshold = b.kf().chi2_threshold;
    let mut seen_rejected = false;
    for start in [15.0, 25.0, 60.0] {
        let out = b.fusion_ripper(start, &b.attack_config(1.5, 1.8, Side::Right)).unwrap();
        for r in &out.spoof_log {
            assert_eq!(r.accepted, r.chi2 <= threshold, "chi2 {} at {}", r.chi2, r.t);
            seen_rejected |= !r.accepted;
        }
    }
    assert!(seen_rejected);
}

#[test]
fn unit_factor_equals_stage_one() {
    let b = bench(demo_trace(150.0));
    for start in [20.0, 25.0, 85.0] {
        let cfg = b.attack_config(0.6, 1.0, Side::Left);
        let full = b.run(start, &cfg, &RunOptions::new(Strategy::FusionRipper)).unwrap();
        let one = b.run(start, &cfg, &RunOptions::new(Strategy::StageOneOnly)).unwrap();
        assert_eq!(full.deviation_series, one.deviation_series);
        let deltas = |o: &msf_spoof::attack::AttackOutcome| o.spoof_log.iter().map(|r| r.delta).collect::<Vec<_>>();
        assert_eq!(deltas(&full), deltas(&one));
    }
}

#[test]
fn random_attack_is_reproducible() {
    let b = bench(demo_trace(150.0));
    let cfg = b.attack_config(1.0, 1.0, Side::Left);
    let a = b.random_attack(20.0, &cfg, 10.0, 5).unwrap();
    let again = b.random_attack(20.0, &cfg, 10.0, 5).unwrap();
    let other = b.random_attack(20.0, &cfg, 10.0, 6).unwrap();
    assert_eq!(a, again);
    assert_ne!(a.spoof_log, other.spoof_log);
    assert!(a.spoof_log.iter().all(|r| (0.0..=10.0).contains(&r.delta)));
}

#[test]
fn parallel_runs_match_sequential_runs() {
    use rayon::prelude::*;
    let b = bench(demo_trace(150.0));
    let starts = [15.0, 20.0, 25.0, 30.0];
    let seq: Vec<_> = starts
        .iter()
        .map(|s| b.fusion_ripper(*s, &b.attack_config(0.5, 1.2, Side::Left)).unwrap())
        .collect();
    let par: Vec<_> = starts
        .par_iter()
        .map(|s| b.fusion_ripper(*s, &b.attack_config(0.5, 1.2, Side::Left)).unwrap())
        .collect();
    assert_eq!(seq, par);
}

#[test]
fn start_must_be_a_gps_epoch() {
    let b = bench(noise_free_trace(30.0));
    assert!(b.fusion_ripper(10.5, &b.attack_config(0.5, 1.2, Side::Left)).is_err());
    assert!(b.fusion_ripper(10.0, &b.attack_config(0.5, 1.2, Side::Left)).is_ok());
    assert!(b.fusion_ripper(10.0, &b.attack_config(0.0, 1.2, Side::Left)).is_err());
    assert!(b.fusion_ripper(10.0, &b.attack_config(0.5, 0.9, Side::Left)).is_err());
}

#[test]
fn safe_trial_returns_to_authentic_gps() {
    let b = bench(demo_trace(150.0));
    let cfg = ProfilingConfig::default();
    let mut stopped = 0;
    for start in [20.0, 25.0, 80.0] {
        let out = safe_trial_outcome(&b, start, 0.5, 1.5, Side::Left, &cfg).unwrap();
        let Some(stop) = out.stopped_at else { continue };
        stopped += 1;
        assert!(out.success_time(cfg.safe_threshold).is_some());
        let peak = out.deviation_series.iter().map(|(_, d)| *d).fold(0.0, f64::max);
        let last = out.deviation_series.last().unwrap().1;
        assert!(out.spoof_log.iter().all(|r| r.t <= stop));
        assert!(last < peak);
        assert!(last.abs() < cfg.safe_threshold, "deviation {last} remains after the stop");
    }
    assert!(stopped > 0, "no trial reached the safe threshold");
}

#[test]
fn closed_loop_without_attack_keeps_the_lane() {
    let run = |trace: Trace| {
        let b = bench(trace);
        let cfg = b.attack_config(1.0, 1.0, Side::Left);
        let r = b
            .closed_loop_attack(20.0, &cfg, &Default::default(), &RunOptions::new(Strategy::Scripted(vec![])))
            .unwrap();
        r.physical_dev_series.iter().map(|(_, x)| x.abs()).fold(0.0, f64::max)
    };
    let plain = generate_synthetic_trace(150.0, &scenario(), &NoiseModel::default()).unwrap();
    let worst = run(plain);
    assert!(worst < 0.05, "physical drift {worst}");
    // Biased LiDAR periods move the estimate, never as far as the lane line.
    let worst = run(demo_trace(150.0));
    assert!(worst < 0.295, "physical drift {worst} with biased LiDAR");
}

#[test]
fn closed_loop_pushes_the_vehicle_away_from_the_spoof() {
    let b = bench(demo_trace(150.0));
    let cfg = b.attack_config(0.5, 1.5, Side::Left);
    let r = b
        .closed_loop_attack(20.0, &cfg, &Default::default(), &RunOptions::new(Strategy::FusionRipper))
        .unwrap();
    assert!(r.outcome.stage2_time.is_some());
    let most_right = r.physical_dev_series.iter().map(|(_, x)| *x).fold(0.0, f64::min);
    assert!(most_right < -0.3, "vehicle moved at most {most_right}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn goal_success_is_monotone(devs in prop::collection::vec(-1.0f64..4.0, 1..60), g1 in 0.0f64..3.0, gap in 0.0f64..2.0) {
        use msf_spoof::attack::{AttackOutcome, GoalResult};
        let g2 = g1 + gap;
        let series: Vec<(f64, f64)> = devs.iter().enumerate().map(|(i, d)| (i as f64 * 0.2, *d)).collect();
        let out = AttackOutcome {
            start_time: 0.0,
            side: Side::Left,
            d: 1.0,
            f: 1.0,
            stage2_time: None,
            max_deviation: devs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            deviation_series: series,
            success: Vec::<GoalResult>::new(),
            fitted_base: 1.0,
            stopped_at: None,
            spoof_log: vec![],
        };
        if let Some(t2) = out.success_time(g2) {
            let t1 = out.success_time(g1);
            prop_assert!(t1.is_some_and(|t1| t1 <= t2));
        }
    }
}

#[test]
fn wrong_way_never_beats_off_road_in_a_sweep() {
    let b = bench(demo_trace(200.0));
    let g = goal_thresholds(&RoadGeometry::local());
    let opts = RunOptions::new(Strategy::FusionRipper).with_goals(vec![g.off_road, g.wrong_way]);
    let mut all = Vec::new();
    for d in [0.3, 0.8] {
        for f in [1.2, 1.8] {
            for start in [15.0, 25.0, 35.0, 75.0] {
                for side in [Side::Left, Side::Right] {
                    let mut cfg = b.attack_config(d, f, side);
                    cfg.max_duration = 60.0;
                    all.push(b.run(start, &cfg, &opts).unwrap().summary());
                }
            }
        }
    }
    let off = success_metrics(&all, g.off_road, 60.0).unwrap();
    let wrong = success_metrics(&all, g.wrong_way, 60.0).unwrap();
    for (a, b) in off.cells.iter().zip(&wrong.cells) {
        assert_eq!((a.d, a.f), (b.d, b.f));
        assert!(b.rate <= a.rate);
    }
}
