//! Sensor traces: ground truth, IMU, GPS and LiDAR-locator records.

mod io;
mod synth;

pub use io::{read_trace, write_trace};
pub use synth::{
    generate_synthetic_trace, inject_unconfident_periods, DemoTraceSpec, NoiseModel, Scenario,
    UnconfidentPeriod, IMU_RATE_HZ,
};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::msf::normalize_angle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthPose {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub heading: f64,
    pub timestamp: f64,
}

impl GroundTruthPose {
    /// Unit normal pointing left of the heading.
    pub fn left_normal(&self) -> Vector2<f64> {
        let (s, c) = self.heading.sin_cos();
        Vector2::new(-s, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Imu { accel_body: Vector2<f64>, yaw_rate: f64 },
    Gps { position: Vector2<f64>, uncertainty: Vector2<f64> },
    Lidar { position: Vector2<f64>, uncertainty: Vector2<f64> },
    Truth(GroundTruthPose),
}

impl Payload {
    /// Processing order among events sharing a timestamp.
    fn rank(&self) -> u8 {
        match self {
            Payload::Imu { .. } => 0,
            Payload::Truth(_) => 1,
            Payload::Lidar { .. } => 2,
            Payload::Gps { .. } => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Imu { .. } => "imu",
            Payload::Gps { .. } => "gps",
            Payload::Lidar { .. } => "lidar",
            Payload::Truth(_) => "truth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub timestamp: f64,
    pub payload: Payload,
}

/// An immutable, time-sorted event stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    events: Vec<TraceEvent>,
    truth: Vec<GroundTruthPose>,
}

impl Trace {
    /// Sorts by (timestamp, kind rank); the sort is stable.
    pub fn new(mut events: Vec<TraceEvent>) -> Result<Self> {
        if let Some(e) = events.iter().find(|e| !e.timestamp.is_finite()) {
            return Err(Error::NumericInput(format!("event timestamp {}", e.timestamp)));
        }
        events.sort_by(|a, b| {
            a.timestamp
                .total_cmp(&b.timestamp)
                .then(a.payload.rank().cmp(&b.payload.rank()))
        });
        Self::from_sorted(events)
    }

    fn from_sorted(events: Vec<TraceEvent>) -> Result<Self> {
        let truth: Vec<GroundTruthPose> = events
            .iter()
            .filter_map(|e| match e.payload {
                Payload::Truth(p) => Some(p),
                _ => None,
            })
            .collect();
        if truth.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::validation("trace.truth", "timestamps must be strictly increasing"));
        }
        Ok(Self { events, truth })
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn truth(&self) -> &[GroundTruthPose] {
        &self.truth
    }

    pub fn start_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.timestamp)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.timestamp)
    }

    pub fn gps_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.payload, Payload::Gps { .. }))
            .map(|e| e.timestamp)
            .collect()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.events.iter().filter(|e| e.payload.kind() == kind).count()
    }

    /// Copy without LiDAR-locator fixes.
    pub fn without_lidar(&self) -> Trace {
        let events = self
            .events
            .iter()
            .filter(|e| !matches!(e.payload, Payload::Lidar { .. }))
            .copied()
            .collect();
        Trace {
            events,
            truth: self.truth.clone(),
        }
    }

    /// Ground truth at `t`, linearly interpolated between samples and
    /// clamped at the ends.
    pub fn truth_at(&self, t: f64) -> Option<GroundTruthPose> {
        let truth = &self.truth;
        let first = truth.first()?;
        let last = truth.last()?;
        if t <= first.timestamp {
            return Some(*first);
        }
        if t >= last.timestamp {
            return Some(*last);
        }
        let i = truth.partition_point(|p| p.timestamp <= t);
        let (a, b) = (&truth[i - 1], &truth[i]);
        if a.timestamp == t {
            return Some(*a);
        }
        let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
        let dh = normalize_angle(b.heading - a.heading);
        Some(GroundTruthPose {
            position: a.position + (b.position - a.position) * w,
            velocity: a.velocity + (b.velocity - a.velocity) * w,
            heading: normalize_angle(a.heading + dh * w),
            timestamp: t,
        })
    }
}

/// Per-axis median of the GPS fix variances.
pub fn median_gps_uncertainty(trace: &Trace) -> Result<Vector2<f64>> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for e in trace.events() {
        if let Payload::Gps { uncertainty, .. } = e.payload {
            xs.push(uncertainty.x);
            ys.push(uncertainty.y);
        }
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput("trace has no GPS fixes".into()));
    }
    Ok(Vector2::new(median(&mut xs), median(&mut ys)))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
