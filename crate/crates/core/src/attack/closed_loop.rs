//! Attack runs with the lateral controller in the loop: the physical vehicle
//! follows the steering computed from the attacked estimate, and every
//! sensor reading is re-synthesized from the displaced physical pose.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engine::{AttackBench, AttackConfig, AttackOutcome, RunOptions, Scheduler, SpoofRecord, Tracker};
use super::spoof_error::apply_spoof_error;
use crate::error::Result;
use crate::msf::{normalize_angle, Measurement, Source};
use crate::trace::Payload;
use crate::vehicle::{lateral_controller, steering_to_pose_delta, ControllerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopOutcome {
    /// Trigger and fit use the localization error (estimate minus physical
    /// pose); goals use the physical deviation away from the attack side.
    pub outcome: AttackOutcome,
    /// (timestamp, physical lateral offset from the lane center, positive left).
    pub physical_dev_series: Vec<(f64, f64)>,
}

/// Lateral displacement of the physical vehicle relative to the recorded
/// drive, in the lane frame.
#[derive(Debug, Default, Clone, Copy)]
struct Displacement {
    offset: f64,
    heading: f64,
    /// Heading and lateral-speed changes still to be reported by the IMU.
    pending_heading: f64,
    pending_lateral_speed: f64,
}

impl AttackBench {
    pub fn closed_loop_attack(
        &self,
        start_time: f64,
        cfg: &AttackConfig,
        ctrl: &ControllerConfig,
        opts: &RunOptions,
    ) -> Result<ClosedLoopOutcome> {
        ctrl.validate()?;
        let k0 = self.epoch_index(start_time)?;
        let trace = self.trace();
        let events = trace.events();
        let kf = self.kf();
        let start = events[self.epoch_events()[k0]].timestamp;
        let sign = cfg.side.sign();
        let mut filter = self.snapshot(k0).clone();
        let mut sched = Scheduler::new(&opts.strategy, cfg);
        let mut tracker = Tracker::new(start, cfg.trigger_threshold, &opts.goals);
        let mut err_rng = opts.spoof_error.map(|m| ChaCha8Rng::seed_from_u64(m.seed));
        let mut disp = Displacement::default();
        let mut physical = Vec::new();
        let mut last_t = start;
        for ev in &events[self.epoch_events()[k0]..] {
            if ev.timestamp - start > cfg.max_duration + 1e-6 {
                break;
            }
            let lane = trace.truth_at(ev.timestamp).expect("bench trace has truth");
            let normal = lane.left_normal();
            match ev.payload {
                Payload::Truth(pose) => {
                    let est = filter.state();
                    let lateral = (est.position - pose.position).dot(&normal);
                    let heading_err = normalize_angle(est.heading - pose.heading);
                    let theta = lateral_controller(lateral, heading_err, ctrl);
                    let speed = pose.velocity.norm();
                    let (_, rate) = steering_to_pose_delta(speed, ctrl, theta)?;
                    let next = rate * ctrl.cycle_time;
                    disp.pending_heading += next - disp.heading;
                    disp.pending_lateral_speed += speed * (next.sin() - disp.heading.sin());
                    disp.heading = next;
                    physical.push((ev.timestamp, disp.offset));
                }
                Payload::Imu { accel_body, yaw_rate } => {
                    let dt = ev.timestamp - last_t;
                    let mut accel = accel_body;
                    let mut yaw = yaw_rate;
                    if dt > 0.0 && (disp.pending_heading != 0.0 || disp.pending_lateral_speed != 0.0) {
                        let h = lane.heading + disp.heading - disp.pending_heading;
                        let (s, c) = h.sin_cos();
                        let world_to_body = Matrix2::new(c, s, -s, c);
                        accel += world_to_body * (normal * (disp.pending_lateral_speed / dt));
                        yaw += disp.pending_heading / dt;
                        disp.pending_heading = 0.0;
                        disp.pending_lateral_speed = 0.0;
                    }
                    let speed = lane.velocity.norm();
                    disp.offset += speed * dt * disp.heading.sin();
                    filter.on_imu(ev.timestamp, accel, yaw, kf)?;
                    last_t = ev.timestamp;
                }
                Payload::Lidar { position, uncertainty } => {
                    let m = Measurement::new(Source::Lidar, position + normal * disp.offset, uncertainty, ev.timestamp);
                    filter.on_measurement(&m, kf)?;
                    let (dev, goal_dev) = self.closed_loop_devs(&filter.position(), &lane.position, &normal, &disp, sign);
                    tracker.sample(ev.timestamp, dev, goal_dev, &mut sched);
                    if let Some(limit) = opts.stop_at {
                        if !tracker.stopped() && goal_dev >= limit {
                            tracker.stop(ev.timestamp);
                        }
                    }
                }
                Payload::Gps { position, uncertainty } => {
                    let spoofing = !tracker.stopped();
                    let in_stage2 = sched.in_stage2();
                    let physical_pos = lane.position + normal * disp.offset;
                    let mut delta = 0.0;
                    let meas = if spoofing {
                        delta = sched.next_delta() * sign;
                        let m = Measurement::new(
                            Source::GpsSpoofed,
                            physical_pos + normal * delta,
                            cfg.spoof_uncertainty,
                            ev.timestamp,
                        );
                        match (&opts.spoof_error, err_rng.as_mut()) {
                            (Some(model), Some(rng)) => apply_spoof_error(&m, model, rng)?,
                            _ => m,
                        }
                    } else {
                        Measurement::new(Source::Gps, position + normal * disp.offset, uncertainty, ev.timestamp)
                    };
                    let log = filter.on_measurement(&meas, kf)?;
                    if spoofing {
                        tracker.log_spoof(SpoofRecord {
                            t: ev.timestamp,
                            delta,
                            chi2: log.chi2,
                            accepted: log.accepted,
                        });
                    }
                    let (dev, goal_dev) = self.closed_loop_devs(&filter.position(), &lane.position, &normal, &disp, sign);
                    tracker.sample(ev.timestamp, dev, goal_dev, &mut sched);
                    tracker.epoch_end(dev, spoofing && in_stage2);
                    if let Some(limit) = opts.stop_at {
                        if !tracker.stopped() && goal_dev >= limit {
                            tracker.stop(ev.timestamp);
                        }
                    }
                }
            }
            if opts.stop_after_goals && opts.stop_at.is_none() && tracker.all_goals_met() {
                break;
            }
        }
        Ok(ClosedLoopOutcome {
            outcome: tracker.finish(cfg),
            physical_dev_series: physical,
        })
    }

    /// Localization error toward the attack side, and physical deviation
    /// away from it.
    fn closed_loop_devs(
        &self,
        estimate: &Vector2<f64>,
        lane: &Vector2<f64>,
        normal: &Vector2<f64>,
        disp: &Displacement,
        sign: f64,
    ) -> (f64, f64) {
        let physical = lane + normal * disp.offset;
        ((estimate - physical).dot(normal) * sign, -disp.offset * sign)
    }
}
