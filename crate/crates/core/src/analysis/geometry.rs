use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::GroundTruthPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Local,
    Highway,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub lane_width: f64,
    pub car_width: f64,
    pub shoulder_width: f64,
    pub road_type: RoadType,
}

impl RoadGeometry {
    pub fn local() -> Self {
        Self {
            lane_width: 2.70,
            car_width: 2.11,
            shoulder_width: 0.60,
            road_type: RoadType::Local,
        }
    }

    pub fn highway() -> Self {
        Self {
            lane_width: 3.60,
            car_width: 2.11,
            shoulder_width: 1.20,
            road_type: RoadType::Highway,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.car_width > 0.0 && self.lane_width > self.car_width) {
            return Err(Error::validation("geometry", "requires lane_width > car_width > 0"));
        }
        if !(self.shoulder_width >= 0.0) {
            return Err(Error::validation("geometry.shoulder_width", "must be >= 0"));
        }
        Ok(())
    }
}

/// Lateral deviations, in meters, needed for each attack goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalThresholds {
    pub off_road: f64,
    pub wrong_way: f64,
    pub touch_lane_line: f64,
}

/// Rounds to the nanometer so that decimal widths give decimal thresholds.
fn round_nm(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

pub fn goal_thresholds(geom: &RoadGeometry) -> GoalThresholds {
    let (l, c, s) = (geom.lane_width, geom.car_width, geom.shoulder_width);
    GoalThresholds {
        off_road: round_nm((l - c) / 2.0 + s),
        wrong_way: round_nm((l + c) / 2.0),
        touch_lane_line: round_nm((l - c) / 2.0),
    }
}

/// Signed distance from `pos` to the nearest segment of the polyline,
/// positive to the left of travel.
pub fn lateral_deviation(pos: &Vector2<f64>, trajectory: &[GroundTruthPose]) -> Result<f64> {
    if trajectory.len() < 2 {
        return Err(Error::Argument("trajectory needs at least two poses".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for w in trajectory.windows(2) {
        let (a, b) = (w[0].position, w[1].position);
        let seg = b - a;
        let len2 = seg.norm_squared();
        if len2 == 0.0 {
            continue;
        }
        let u = ((pos - a).dot(&seg) / len2).clamp(0.0, 1.0);
        let foot = a + seg * u;
        let dist = (pos - foot).norm();
        let cross = seg.x * (pos.y - a.y) - seg.y * (pos.x - a.x);
        let signed = if cross < 0.0 { -dist } else { dist };
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, signed));
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| Error::Argument("trajectory has zero length".into()))
}
