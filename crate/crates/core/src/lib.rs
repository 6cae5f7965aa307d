//! Kalman-filter multi-sensor-fusion localization and GPS spoofing attacks
//! against it.
//!
//! * [`msf`]: the fusion filter (IMU prediction, position updates,
//!   chi-squared gating).
//! * [`vehicle`]: kinematics, steering conversion and the lateral controller.
//! * [`trace`]: synthetic sensor traces and the JSONL trace format.
//! * [`attack`]: the two-stage attack, baselines, upper-bound search and
//!   closed-loop runs.
//! * [`analysis`]: fits, statistics, metrics and road geometry.
//! * [`profiler`]: offline attack-parameter profiling.
//! * [`experiment`]: config-driven campaigns and report files.

pub mod analysis;
pub mod attack;
pub mod defaults;
pub mod error;
pub mod experiment;
pub mod msf;
pub mod profiler;
pub mod trace;
pub mod vehicle;

pub use error::{Error, Result};
