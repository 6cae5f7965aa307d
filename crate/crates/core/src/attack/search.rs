use serde::{Deserialize, Serialize};

use super::engine::{feed, AttackBench};
use crate::analysis::fit_exponential;
use crate::error::{Error, Result};
use crate::msf::{Measurement, MsfFilter, OutlierPolicy, Source};
use crate::trace::Payload;

/// Candidate spoofing distances `0, step, 2*step, ..., max` on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub step: f64,
    pub max: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        let a = &crate::defaults::defaults().attack;
        Self {
            step: a.search_step,
            max: a.search_max,
        }
    }
}

impl SearchGrid {
    /// Signed candidates ordered by magnitude, left before right.
    pub fn candidates(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        if self.step > 0.0 {
            let n = (self.max / self.step + 1e-9).floor() as usize;
            for k in 1..=n {
                let v = k as f64 * self.step;
                out.push(v);
                out.push(-v);
            }
        }
        out
    }
}

/// Per-epoch diagnostics gathered during a window search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub t: f64,
    /// trace(P) of the attacked filter at the start of the epoch.
    pub p_trace: f64,
    /// Mean LiDAR variance (per axis) over the epoch.
    pub r_lidar: f64,
    /// Mean distance between LiDAR fixes and the non-attacked estimate.
    pub delta_lidar: f64,
    /// Mean IMU acceleration magnitude.
    pub imu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub window_start: f64,
    /// End-of-epoch |deviation| for each epoch in the window.
    pub max_dev_series: Vec<f64>,
    /// Committed signed distance per epoch, positive left.
    pub best_deltas: Vec<f64>,
    pub logs: Vec<WindowLog>,
    pub fitted_base: f64,
}

impl SearchResult {
    pub fn max_deviation(&self) -> f64 {
        self.max_dev_series.iter().copied().fold(0.0, f64::max)
    }
}

impl AttackBench {
    /// Runs one epoch from GPS event `k` with spoofed distance `delta`;
    /// returns the filter at the end of the epoch and the last event index.
    fn play_epoch(&self, filter: &MsfFilter, k: usize, delta: f64) -> Result<(MsfFilter, usize, bool)> {
        let events = self.trace().events();
        let j0 = self.epoch_events()[k];
        let j_end = self.epoch_events().get(k + 1).copied().unwrap_or(events.len());
        let t = events[j0].timestamp;
        let anchor = self.trace().truth_at(t).expect("bench trace has truth");
        let meas = Measurement::new(
            Source::GpsSpoofed,
            anchor.position + anchor.left_normal() * delta,
            self.spoof_uncertainty(),
            t,
        );
        let mut f = filter.clone();
        let log = f.on_measurement(&meas, self.kf())?;
        for ev in &events[j0 + 1..j_end] {
            feed(&mut f, ev, self.kf())?;
        }
        Ok((f, j_end - 1, log.accepted))
    }

    fn epoch_log(&self, filter: &MsfFilter, k: usize) -> WindowLog {
        let events = self.trace().events();
        let j0 = self.epoch_events()[k];
        let j_end = self.epoch_events().get(k + 1).copied().unwrap_or(events.len());
        let (mut r, mut dl, mut nl, mut imu, mut ni) = (0.0, 0.0, 0usize, 0.0, 0usize);
        for (j, ev) in events.iter().enumerate().take(j_end).skip(j0) {
            match ev.payload {
                Payload::Lidar { position, uncertainty } => {
                    r += 0.5 * (uncertainty.x + uncertainty.y);
                    dl += (position - self.baseline_at(j)).norm();
                    nl += 1;
                }
                Payload::Imu { accel_body, .. } => {
                    imu += accel_body.norm();
                    ni += 1;
                }
                _ => {}
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        WindowLog {
            t: events[j0].timestamp,
            p_trace: filter.state().covariance_trace(),
            r_lidar: mean(r, nl),
            delta_lidar: mean(dl, nl),
            imu: mean(imu, ni),
        }
    }

    /// Greedy upper-bound search: at every GPS epoch of the window, commit
    /// the candidate distance that maximizes the end-of-epoch deviation from
    /// the non-attacked estimate.
    pub fn exhaustive_window_search(&self, window_start: f64, n_points: usize, grid: &SearchGrid) -> Result<SearchResult> {
        let k0 = self.epoch_index(window_start)?;
        if n_points == 0 || k0 + n_points > self.epoch_events().len() {
            return Err(Error::Argument(format!(
                "window of {n_points} epochs from {window_start} exceeds the trace"
            )));
        }
        let candidates = grid.candidates();
        let discard = matches!(self.kf().outlier_policy, OutlierPolicy::Discard);
        let mut filter = self.snapshot(k0).clone();
        let mut series = Vec::with_capacity(n_points);
        let mut deltas = Vec::with_capacity(n_points);
        let mut logs = Vec::with_capacity(n_points);
        for k in k0..k0 + n_points {
            logs.push(self.epoch_log(&filter, k));
            // Under DISCARD every rejected candidate ends the epoch identically.
            let mut rejected: Option<(MsfFilter, f64)> = None;
            let mut best: Option<(MsfFilter, f64, f64)> = None;
            for &delta in &candidates {
                let (f, dev) = match &rejected {
                    Some((rf, rdev)) if discard && !self.accepts(&filter, k, delta)? => (rf.clone(), *rdev),
                    _ => {
                        let (f, j_last, accepted) = self.play_epoch(&filter, k, delta)?;
                        let dev = self.lateral_offset(j_last, f.position()).abs();
                        if !accepted && rejected.is_none() {
                            rejected = Some((f.clone(), dev));
                        }
                        (f, dev)
                    }
                };
                if best.as_ref().is_none_or(|(_, _, b)| dev > *b) {
                    best = Some((f, delta, dev));
                }
            }
            let (f, delta, dev) = best.expect("candidate list is non-empty");
            filter = f;
            series.push(dev);
            deltas.push(delta);
        }
        let fitted_base = fit_exponential(&series).map_or(1.0, |fit| fit.a);
        Ok(SearchResult {
            window_start,
            max_dev_series: series,
            best_deltas: deltas,
            logs,
            fitted_base,
        })
    }

    fn accepts(&self, filter: &MsfFilter, k: usize, delta: f64) -> Result<bool> {
        let events = self.trace().events();
        let t = events[self.epoch_events()[k]].timestamp;
        let anchor = self.trace().truth_at(t).expect("bench trace has truth");
        let meas = Measurement::new(
            Source::GpsSpoofed,
            anchor.position + anchor.left_normal() * delta,
            self.spoof_uncertainty(),
            t,
        );
        let mut probe = filter.clone();
        probe.catch_up_to(t, self.kf())?;
        let chi2 = crate::msf::chi_squared(probe.state(), &meas, self.kf())?;
        Ok(chi2 <= self.kf().chi2_threshold)
    }

    /// Replays a window with fixed signed distances, reporting end-of-epoch
    /// |deviation|.
    pub fn replay_window(&self, window_start: f64, deltas: &[f64]) -> Result<Vec<f64>> {
        let k0 = self.epoch_index(window_start)?;
        if k0 + deltas.len() > self.epoch_events().len() {
            return Err(Error::Argument("window exceeds the trace".into()));
        }
        let mut filter = self.snapshot(k0).clone();
        let mut out = Vec::with_capacity(deltas.len());
        for (m, &delta) in deltas.iter().enumerate() {
            let (f, j_last, _) = self.play_epoch(&filter, k0 + m, delta)?;
            out.push(self.lateral_offset(j_last, f.position()).abs());
            filter = f;
        }
        Ok(out)
    }

    /// Start times of every window of `n_points` consecutive GPS epochs,
    /// stepping `stride` epochs, beginning at or after `from`.
    pub fn window_starts(&self, n_points: usize, stride: usize, from: f64) -> Vec<f64> {
        let times = self.gps_epoch_times();
        let last = times.len().saturating_sub(n_points);
        (0..=last)
            .step_by(stride.max(1))
            .filter(|&k| k + n_points <= times.len())
            .map(|k| times[k])
            .filter(|t| *t + 1e-9 >= from)
            .collect()
    }
}
