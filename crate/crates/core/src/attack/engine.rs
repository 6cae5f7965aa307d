use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spoof_error::{apply_spoof_error, SpoofErrorModel};
use crate::analysis::fit_exponential;
use crate::error::{Error, Result};
use crate::msf::{KfConfig, Measurement, MsfFilter, MsfState, Source};
use crate::trace::{median_gps_uncertainty, GroundTruthPose, Payload, Trace, TraceEvent};

/// Epoch-matching tolerance for start times, seconds.
const TIME_EPS: f64 = 1e-6;
/// Number of stage-2 GPS epochs used to fit the growth base.
const FIT_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub d: f64,
    pub f: f64,
    pub side: Side,
    pub trigger_threshold: f64,
    /// Diagonal variances reported with every spoofed fix.
    pub spoof_uncertainty: Vector2<f64>,
    pub max_duration: f64,
}

impl AttackConfig {
    pub fn new(d: f64, f: f64, side: Side, spoof_uncertainty: Vector2<f64>) -> Self {
        let defaults = &crate::defaults::defaults().attack;
        Self {
            d,
            f,
            side,
            trigger_threshold: defaults.trigger_threshold,
            spoof_uncertainty,
            max_duration: defaults.max_duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0) {
            return Err(Error::validation("attack.d", "must be > 0"));
        }
        if !(self.f >= 1.0) {
            return Err(Error::validation("attack.f", "must be >= 1"));
        }
        self.validate_common()
    }

    fn validate_common(&self) -> Result<()> {
        if !(self.trigger_threshold > 0.0) {
            return Err(Error::validation("attack.trigger_threshold", "must be > 0"));
        }
        if !(self.max_duration > 0.0) {
            return Err(Error::validation("attack.max_duration", "must be > 0"));
        }
        if !self.spoof_uncertainty.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::validation("attack.spoof_uncertainty", "variances must be > 0"));
        }
        Ok(())
    }
}

/// How the spoofed distance evolves over GPS epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Constant `d` until the trigger, then `d * f^i`.
    FusionRipper,
    /// Constant `d` throughout.
    StageOneOnly,
    /// `d * f^i` from the first spoofed epoch.
    StageTwoOnly,
    /// Uniform in `[0, range_max]` per epoch.
    Random { range_max: f64, seed: u64 },
    /// Fixed per-epoch distances; zero once exhausted.
    Scripted(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub strategy: Strategy,
    /// Once the deviation reaches this value, authentic GPS resumes.
    pub stop_at: Option<f64>,
    pub spoof_error: Option<SpoofErrorModel>,
    pub goals: Vec<f64>,
    /// End the run as soon as every goal has been reached.
    pub stop_after_goals: bool,
}

impl RunOptions {
    pub fn new(strategy: Strategy) -> Self {
        let g = crate::analysis::goal_thresholds(&crate::analysis::RoadGeometry::local());
        Self {
            strategy,
            stop_at: None,
            spoof_error: None,
            goals: vec![g.off_road, g.wrong_way],
            stop_after_goals: false,
        }
    }

    pub fn with_goals(mut self, goals: Vec<f64>) -> Self {
        self.goals = goals;
        self
    }

    pub fn stop_after_goals(mut self) -> Self {
        self.stop_after_goals = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub goal: f64,
    /// Seconds from the attack start; `None` if never reached.
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoofRecord {
    pub t: f64,
    /// Signed distance of the spoofed fix from the victim, positive left.
    pub delta: f64,
    pub chi2: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub start_time: f64,
    pub side: Side,
    pub d: f64,
    pub f: f64,
    pub stage2_time: Option<f64>,
    /// (timestamp, deviation toward the attack side) after every position update.
    pub deviation_series: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub success: Vec<GoalResult>,
    pub fitted_base: f64,
    pub stopped_at: Option<f64>,
    pub spoof_log: Vec<SpoofRecord>,
}

impl AttackOutcome {
    pub fn success_time(&self, goal: f64) -> Option<f64> {
        self.success
            .iter()
            .find(|g| (g.goal - goal).abs() < 1e-12)
            .and_then(|g| g.time)
            .or_else(|| first_crossing(&self.deviation_series, goal).map(|t| t - self.start_time))
    }

    pub fn summary(&self) -> OutcomeSummary {
        OutcomeSummary {
            start_time: self.start_time,
            side: self.side,
            d: self.d,
            f: self.f,
            stage2_time: self.stage2_time,
            max_deviation: self.max_deviation,
            fitted_base: self.fitted_base,
            success: self.success.clone(),
        }
    }
}

/// An [`AttackOutcome`] without its series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub start_time: f64,
    pub side: Side,
    pub d: f64,
    pub f: f64,
    pub stage2_time: Option<f64>,
    pub max_deviation: f64,
    pub fitted_base: f64,
    pub success: Vec<GoalResult>,
}

impl OutcomeSummary {
    pub fn success_time(&self, goal: f64) -> Option<f64> {
        self.success
            .iter()
            .find(|g| (g.goal - goal).abs() < 1e-12)
            .and_then(|g| g.time)
    }
}

fn first_crossing(series: &[(f64, f64)], goal: f64) -> Option<f64> {
    series.iter().find(|(_, d)| *d >= goal).map(|(t, _)| *t)
}

pub(crate) fn initial_filter(pose: &GroundTruthPose, kf: &KfConfig) -> MsfFilter {
    MsfFilter::new(MsfState::new(
        pose.position,
        pose.velocity,
        pose.heading,
        kf.initial_covariance,
        pose.timestamp,
    ))
}

/// Feeds one event to the filter; returns whether a position update ran.
pub(crate) fn feed(filter: &mut MsfFilter, ev: &TraceEvent, kf: &KfConfig) -> Result<bool> {
    match ev.payload {
        Payload::Imu { accel_body, yaw_rate } => {
            filter.on_imu(ev.timestamp, accel_body, yaw_rate, kf)?;
            Ok(false)
        }
        Payload::Gps { position, uncertainty } => {
            filter.on_measurement(&Measurement::new(Source::Gps, position, uncertainty, ev.timestamp), kf)?;
            Ok(true)
        }
        Payload::Lidar { position, uncertainty } => {
            filter.on_measurement(&Measurement::new(Source::Lidar, position, uncertainty, ev.timestamp), kf)?;
            Ok(true)
        }
        Payload::Truth(_) => Ok(false),
    }
}

/// Replays the trace without attack; one sample per measurement update.
/// The filter starts at the first ground-truth pose.
pub fn run_baseline(trace: &Trace, kf: &KfConfig) -> Result<Vec<(f64, MsfState)>> {
    let mut out = Vec::new();
    let mut filter: Option<MsfFilter> = None;
    for ev in trace.events() {
        match (&mut filter, &ev.payload) {
            (None, Payload::Truth(p)) => filter = Some(initial_filter(p, kf)),
            (None, _) => {}
            (Some(f), _) => {
                if feed(f, ev, kf)? {
                    out.push((ev.timestamp, *f.state()));
                }
            }
        }
    }
    if filter.is_none() && !trace.is_empty() {
        return Err(Error::Argument("trace has no ground-truth pose to initialize from".into()));
    }
    Ok(out)
}

/// Spoofed-distance bookkeeping shared by open- and closed-loop runs.
pub(crate) struct Scheduler {
    strategy: Strategy,
    d: f64,
    f: f64,
    stage2: bool,
    exponent: i32,
    epoch: usize,
    rng: Option<ChaCha8Rng>,
}

impl Scheduler {
    pub(crate) fn new(strategy: &Strategy, cfg: &AttackConfig) -> Self {
        let rng = match strategy {
            Strategy::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self {
            strategy: strategy.clone(),
            d: cfg.d,
            f: cfg.f,
            stage2: matches!(strategy, Strategy::StageTwoOnly),
            exponent: 0,
            epoch: 0,
            rng,
        }
    }

    pub(crate) fn in_stage2(&self) -> bool {
        self.stage2
    }

    /// Distance for the next spoofed epoch.
    pub(crate) fn next_delta(&mut self) -> f64 {
        let delta = match &self.strategy {
            Strategy::FusionRipper | Strategy::StageTwoOnly if self.stage2 => {
                let v = self.d * self.f.powi(self.exponent);
                self.exponent += 1;
                v
            }
            Strategy::FusionRipper | Strategy::StageOneOnly | Strategy::StageTwoOnly => self.d,
            Strategy::Random { range_max, .. } => {
                let rng = self.rng.as_mut().expect("random strategy owns an rng");
                let u: f64 = rng.random();
                u * range_max
            }
            Strategy::Scripted(v) => v.get(self.epoch).copied().unwrap_or(0.0),
        };
        self.epoch += 1;
        delta
    }

    /// Returns true when this observation switches to stage 2.
    pub(crate) fn observe(&mut self, dev: f64, trigger: f64) -> bool {
        if self.stage2 || dev < trigger {
            return false;
        }
        match self.strategy {
            Strategy::FusionRipper => {
                self.stage2 = true;
                self.exponent = 0;
                true
            }
            // Other strategies only record when the trigger would have fired.
            _ => true,
        }
    }
}

/// Outcome bookkeeping shared by open- and closed-loop runs.
pub(crate) struct Tracker {
    start: f64,
    trigger: f64,
    goals: Vec<f64>,
    series: Vec<(f64, f64)>,
    success: Vec<Option<f64>>,
    stage2_time: Option<f64>,
    stage2_epoch_devs: Vec<f64>,
    all_epoch_devs: Vec<f64>,
    spoof_log: Vec<SpoofRecord>,
    stopped_at: Option<f64>,
}

impl Tracker {
    pub(crate) fn new(start: f64, trigger: f64, goals: &[f64]) -> Self {
        Self {
            start,
            trigger,
            goals: goals.to_vec(),
            series: Vec::new(),
            success: vec![None; goals.len()],
            stage2_time: None,
            stage2_epoch_devs: Vec::new(),
            all_epoch_devs: Vec::new(),
            spoof_log: Vec::new(),
            stopped_at: None,
        }
    }

    /// Records a deviation sample; `dev` drives the trigger and `goal_dev`
    /// the success goals.
    pub(crate) fn sample(&mut self, t: f64, dev: f64, goal_dev: f64, sched: &mut Scheduler) {
        self.series.push((t, goal_dev));
        for (g, hit) in self.goals.iter().zip(self.success.iter_mut()) {
            if hit.is_none() && goal_dev >= *g {
                *hit = Some(t - self.start);
            }
        }
        if self.stage2_time.is_none() && sched.observe(dev, self.trigger) {
            self.stage2_time = Some(t);
        }
    }

    pub(crate) fn epoch_end(&mut self, goal_dev: f64, spoofed_in_stage2: bool) {
        self.all_epoch_devs.push(goal_dev);
        if spoofed_in_stage2 && self.stage2_epoch_devs.len() < FIT_POINTS {
            self.stage2_epoch_devs.push(goal_dev);
        }
    }

    pub(crate) fn log_spoof(&mut self, rec: SpoofRecord) {
        self.spoof_log.push(rec);
    }

    pub(crate) fn stop(&mut self, t: f64) {
        self.stopped_at = Some(t);
    }

    pub(crate) fn stopped(&self) -> bool {
        self.stopped_at.is_some()
    }

    pub(crate) fn all_goals_met(&self) -> bool {
        self.success.iter().all(|s| s.is_some())
    }

    pub(crate) fn finish(self, cfg: &AttackConfig) -> AttackOutcome {
        let fit_devs: Vec<f64> = if self.stage2_time.is_some() && !self.stage2_epoch_devs.is_empty() {
            self.stage2_epoch_devs
        } else {
            self.all_epoch_devs.into_iter().take(FIT_POINTS).collect()
        };
        let fitted_base = match fit_exponential(&fit_devs) {
            Ok(fit) => fit.a,
            Err(_) => 1.0,
        };
        let max_deviation = self
            .series
            .iter()
            .map(|(_, d)| *d)
            .fold(f64::NEG_INFINITY, f64::max);
        AttackOutcome {
            start_time: self.start,
            side: cfg.side,
            d: cfg.d,
            f: cfg.f,
            stage2_time: self.stage2_time,
            max_deviation: if max_deviation.is_finite() { max_deviation } else { 0.0 },
            deviation_series: self.series,
            success: self
                .goals
                .iter()
                .zip(self.success)
                .map(|(g, t)| GoalResult { goal: *g, time: t })
                .collect(),
            fitted_base,
            stopped_at: self.stopped_at,
            spoof_log: self.spoof_log,
        }
    }
}

/// A trace with its non-attacked replay precomputed, so that many attack
/// runs can start from cached filter snapshots.
#[derive(Debug, Clone)]
pub struct AttackBench {
    trace: Arc<Trace>,
    kf: KfConfig,
    /// Non-attacked position after each event.
    baseline: Vec<Vector2<f64>>,
    /// Event index of every GPS fix.
    epochs: Vec<usize>,
    /// Filter state just before each GPS fix.
    snapshots: Vec<MsfFilter>,
    spoof_uncertainty: Vector2<f64>,
}

impl AttackBench {
    pub fn new(trace: Arc<Trace>, kf: KfConfig) -> Result<Self> {
        kf.validate()?;
        let spoof_uncertainty = median_gps_uncertainty(&trace)?;
        let mut baseline = Vec::with_capacity(trace.len());
        let mut epochs = Vec::new();
        let mut snapshots = Vec::new();
        let mut filter: Option<MsfFilter> = None;
        for (j, ev) in trace.events().iter().enumerate() {
            if let Payload::Gps { .. } = ev.payload {
                if let Some(f) = &filter {
                    epochs.push(j);
                    snapshots.push(f.clone());
                }
            }
            match (&mut filter, &ev.payload) {
                (None, Payload::Truth(p)) => filter = Some(initial_filter(p, &kf)),
                (None, _) => {}
                (Some(f), _) => {
                    feed(f, ev, &kf)?;
                }
            }
            let pos = match &filter {
                Some(f) => f.position(),
                None => Vector2::zeros(),
            };
            baseline.push(pos);
        }
        if filter.is_none() {
            return Err(Error::Argument("trace has no ground-truth pose".into()));
        }
        Ok(Self {
            trace,
            kf,
            baseline,
            epochs,
            snapshots,
            spoof_uncertainty,
        })
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn kf(&self) -> &KfConfig {
        &self.kf
    }

    pub fn spoof_uncertainty(&self) -> Vector2<f64> {
        self.spoof_uncertainty
    }

    pub fn gps_epoch_times(&self) -> Vec<f64> {
        self.epochs.iter().map(|&j| self.trace.events()[j].timestamp).collect()
    }

    pub(crate) fn epoch_events(&self) -> &[usize] {
        &self.epochs
    }

    pub(crate) fn snapshot(&self, k: usize) -> &MsfFilter {
        &self.snapshots[k]
    }

    pub(crate) fn baseline_at(&self, j: usize) -> Vector2<f64> {
        self.baseline[j]
    }

    pub fn epoch_index(&self, start_time: f64) -> Result<usize> {
        let events = self.trace.events();
        let k = self
            .epochs
            .partition_point(|&j| events[j].timestamp < start_time - TIME_EPS);
        match self.epochs.get(k) {
            Some(&j) if (events[j].timestamp - start_time).abs() <= TIME_EPS => Ok(k),
            _ => Err(Error::Argument(format!("start time {start_time} is not a GPS epoch"))),
        }
    }

    pub fn attack_config(&self, d: f64, f: f64, side: Side) -> AttackConfig {
        AttackConfig::new(d, f, side, self.spoof_uncertainty)
    }

    /// Truth-normal deviation of `pos` from the non-attacked estimate after event `j`.
    pub(crate) fn lateral_offset(&self, j: usize, pos: Vector2<f64>) -> f64 {
        let t = self.trace.events()[j].timestamp;
        let normal = self.trace.truth_at(t).map_or(Vector2::new(0.0, 1.0), |p| p.left_normal());
        (pos - self.baseline[j]).dot(&normal)
    }

    pub fn run(&self, start_time: f64, cfg: &AttackConfig, opts: &RunOptions) -> Result<AttackOutcome> {
        cfg.validate_common()?;
        if let Some(m) = &opts.spoof_error {
            m.validate()?;
        }
        let k0 = self.epoch_index(start_time)?;
        let events = self.trace.events();
        let start = events[self.epochs[k0]].timestamp;
        let sign = cfg.side.sign();
        let mut filter = self.snapshots[k0].clone();
        let mut sched = Scheduler::new(&opts.strategy, cfg);
        let mut tracker = Tracker::new(start, cfg.trigger_threshold, &opts.goals);
        let mut err_rng = opts.spoof_error.map(|m| ChaCha8Rng::seed_from_u64(m.seed));
        for (j, ev) in events.iter().enumerate().skip(self.epochs[k0]) {
            if ev.timestamp - start > cfg.max_duration + TIME_EPS {
                break;
            }
            match ev.payload {
                Payload::Gps { position, uncertainty } => {
                    let spoofing = !tracker.stopped();
                    let in_stage2 = sched.in_stage2();
                    let mut delta = 0.0;
                    let meas = if spoofing {
                        delta = sched.next_delta() * sign;
                        let anchor = self.trace.truth_at(ev.timestamp).expect("bench trace has truth");
                        let m = Measurement::new(
                            Source::GpsSpoofed,
                            anchor.position + anchor.left_normal() * delta,
                            cfg.spoof_uncertainty,
                            ev.timestamp,
                        );
                        match (&opts.spoof_error, err_rng.as_mut()) {
                            (Some(model), Some(rng)) => apply_spoof_error(&m, model, rng)?,
                            _ => m,
                        }
                    } else {
                        Measurement::new(Source::Gps, position, uncertainty, ev.timestamp)
                    };
                    let log = filter.on_measurement(&meas, &self.kf)?;
                    if spoofing {
                        tracker.log_spoof(SpoofRecord {
                            t: ev.timestamp,
                            delta,
                            chi2: log.chi2,
                            accepted: log.accepted,
                        });
                    }
                    let dev = self.lateral_offset(j, filter.position()) * sign;
                    tracker.sample(ev.timestamp, dev, dev, &mut sched);
                    tracker.epoch_end(dev, spoofing && in_stage2);
                    self.after_sample(&mut tracker, opts, ev.timestamp, dev);
                }
                Payload::Lidar { .. } => {
                    feed(&mut filter, ev, &self.kf)?;
                    let dev = self.lateral_offset(j, filter.position()) * sign;
                    tracker.sample(ev.timestamp, dev, dev, &mut sched);
                    self.after_sample(&mut tracker, opts, ev.timestamp, dev);
                }
                _ => {
                    feed(&mut filter, ev, &self.kf)?;
                }
            }
            if self.done(&tracker, opts) {
                break;
            }
        }
        Ok(tracker.finish(cfg))
    }

    fn after_sample(&self, tracker: &mut Tracker, opts: &RunOptions, t: f64, dev: f64) {
        if let Some(limit) = opts.stop_at {
            if !tracker.stopped() && dev >= limit {
                tracker.stop(t);
            }
        }
    }

    fn done(&self, tracker: &Tracker, opts: &RunOptions) -> bool {
        opts.stop_after_goals && tracker.all_goals_met() && opts.stop_at.is_none()
    }

    /// The two-stage attack.
    pub fn fusion_ripper(&self, start_time: f64, cfg: &AttackConfig) -> Result<AttackOutcome> {
        cfg.validate()?;
        self.run(start_time, cfg, &RunOptions::new(Strategy::FusionRipper))
    }

    /// Uniformly random spoofed distances on `cfg.side`.
    pub fn random_attack(&self, start_time: f64, cfg: &AttackConfig, range_max: f64, seed: u64) -> Result<AttackOutcome> {
        if !(range_max >= 0.0) {
            return Err(Error::Argument("range_max must be >= 0".into()));
        }
        self.run(start_time, cfg, &RunOptions::new(Strategy::Random { range_max, seed }))
    }
}

/// One-shot two-stage attack on a trace; prefer [`AttackBench`] for sweeps.
pub fn fusion_ripper(trace: &Trace, start_time: f64, cfg: &AttackConfig, kf: &KfConfig) -> Result<AttackOutcome> {
    AttackBench::new(Arc::new(trace.clone()), kf.clone())?.fusion_ripper(start_time, cfg)
}

pub fn random_attack(
    trace: &Trace,
    start_time: f64,
    cfg: &AttackConfig,
    range_max: f64,
    seed: u64,
    kf: &KfConfig,
) -> Result<AttackOutcome> {
    AttackBench::new(Arc::new(trace.clone()), kf.clone())?.random_attack(start_time, cfg, range_max, seed)
}
