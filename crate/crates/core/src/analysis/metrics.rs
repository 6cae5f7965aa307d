use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attack::OutcomeSummary;
use crate::error::{Error, Result};

/// Success statistics of one (d, f) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub d: f64,
    pub f: f64,
    pub rate: f64,
    pub successes: usize,
    pub starts: usize,
    pub mean_time: Option<f64>,
    pub std_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub goal: f64,
    pub min_duration: f64,
    pub grid_d: Vec<f64>,
    pub grid_f: Vec<f64>,
    /// Rows follow `grid_d`, columns `grid_f`; `None` where no run exists.
    pub rates: Vec<Vec<Option<f64>>>,
    pub cells: Vec<CellStats>,
    pub best: CellStats,
    pub top: Vec<CellStats>,
}

fn key(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Per-start success: the earliest time any side reaches `goal`, if within
/// `min_duration`.
fn start_successes(runs: &[&OutcomeSummary], goal: f64, min_duration: f64) -> BTreeMap<i64, Option<f64>> {
    let mut by_start: BTreeMap<i64, Option<f64>> = BTreeMap::new();
    for r in runs {
        let hit = r.success_time(goal).filter(|t| *t <= min_duration + 1e-9);
        let slot = by_start.entry(key(r.start_time)).or_insert(None);
        *slot = match (*slot, hit) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    by_start
}

fn cell_stats(d: f64, f: f64, per_start: &BTreeMap<i64, Option<f64>>) -> CellStats {
    let times: Vec<f64> = per_start.values().filter_map(|t| *t).collect();
    let starts = per_start.len();
    let (mean_time, std_time) = if times.is_empty() {
        (None, None)
    } else {
        let m = times.iter().sum::<f64>() / times.len() as f64;
        let v = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / times.len() as f64;
        (Some(m), Some(v.sqrt()))
    };
    CellStats {
        d,
        f,
        rate: times.len() as f64 / starts as f64,
        successes: times.len(),
        starts,
        mean_time,
        std_time,
    }
}

/// Higher rate first, then the profiling scan order: ascending f, then
/// ascending d.
fn better(a: &CellStats, b: &CellStats) -> std::cmp::Ordering {
    b.rate
        .total_cmp(&a.rate)
        .then_with(|| a.f.total_cmp(&b.f))
        .then_with(|| a.d.total_cmp(&b.d))
}

/// A start point succeeds for (d, f) when either side reaches `goal` within
/// `min_duration` seconds of the attack start.
pub fn success_metrics(outcomes: &[OutcomeSummary], goal: f64, min_duration: f64) -> Result<SuccessReport> {
    if outcomes.is_empty() {
        return Err(Error::Argument("no outcomes to score".into()));
    }
    if let Some(o) = outcomes
        .iter()
        .find(|o| !o.success.iter().any(|g| (g.goal - goal).abs() < 1e-12))
    {
        return Err(Error::Argument(format!(
            "outcome at start {} does not track goal {goal}",
            o.start_time
        )));
    }
    let mut grouped: BTreeMap<(i64, i64), Vec<&OutcomeSummary>> = BTreeMap::new();
    for o in outcomes {
        grouped.entry((key(o.d), key(o.f))).or_default().push(o);
    }
    let mut ds: Vec<f64> = outcomes.iter().map(|o| o.d).collect();
    let mut fs: Vec<f64> = outcomes.iter().map(|o| o.f).collect();
    for v in [&mut ds, &mut fs] {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| key(*a) == key(*b));
    }
    let mut cells = Vec::new();
    let mut rates = vec![vec![None; fs.len()]; ds.len()];
    for (i, d) in ds.iter().enumerate() {
        for (j, f) in fs.iter().enumerate() {
            if let Some(runs) = grouped.get(&(key(*d), key(*f))) {
                let c = cell_stats(*d, *f, &start_successes(runs, goal, min_duration));
                rates[i][j] = Some(c.rate);
                cells.push(c);
            }
        }
    }
    let mut ranked = cells.clone();
    ranked.sort_by(better);
    Ok(SuccessReport {
        goal,
        min_duration,
        grid_d: ds,
        grid_f: fs,
        rates,
        best: ranked[0],
        top: ranked.into_iter().take(3).collect(),
        cells,
    })
}

impl SuccessReport {
    /// CSV with one row per `d` and one column per `f`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["d\\f".to_string()];
        header.extend(self.grid_f.iter().map(|f| format!("{f:.1}")));
        w.write_record(&header).map_err(csv_err)?;
        for (d, row) in self.grid_d.iter().zip(&self.rates) {
            let mut rec = vec![format!("{d:.1}")];
            rec.extend(row.iter().map(|r| r.map_or(String::new(), |v| format!("{v:.4}"))));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Argument(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{GoalResult, Side};

    fn run(start: f64, time: Option<f64>) -> OutcomeSummary {
        OutcomeSummary {
            start_time: start,
            side: Side::Left,
            d: 0.5,
            f: 1.5,
            stage2_time: None,
            max_deviation: 0.0,
            fitted_base: 1.0,
            success: vec![GoalResult { goal: 0.895, time }],
        }
    }

    #[test]
    fn counting_and_gate() {
        let runs = [run(10.0, Some(30.0)), run(20.0, None), run(30.0, Some(50.0))];
        let r = success_metrics(&runs, 0.895, 60.0).unwrap();
        assert!((r.best.rate - 2.0 / 3.0).abs() < 1e-12);
        let r = success_metrics(&runs, 0.895, 40.0).unwrap();
        assert!((r.best.rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn either_side_counts() {
        let mut right = run(10.0, Some(20.0));
        right.side = Side::Right;
        let runs = [run(10.0, None), right];
        let r = success_metrics(&runs, 0.895, 60.0).unwrap();
        assert_eq!(r.best.rate, 1.0);
        assert_eq!(r.best.starts, 1);
    }

    #[test]
    fn ties_go_to_the_first_cell_in_scan_order() {
        let cell = |d: f64, f: f64, time: f64| OutcomeSummary { d, f, ..run(10.0, Some(time)) };
        let runs = [cell(0.9, 1.1, 50.0), cell(0.3, 1.5, 5.0), cell(0.5, 1.1, 40.0), cell(0.2, 1.2, 1.0)];
        let r = success_metrics(&runs, 0.895, 60.0).unwrap();
        assert_eq!((r.best.d, r.best.f), (0.5, 1.1));
        let order: Vec<(f64, f64)> = r.top.iter().map(|c| (c.d, c.f)).collect();
        assert_eq!(order, [(0.5, 1.1), (0.9, 1.1), (0.2, 1.2)]);
    }

    #[test]
    fn empty_grid() {
        assert!(success_metrics(&[], 0.895, 60.0).is_err());
    }

    #[test]
    fn csv_shape() {
        let r = success_metrics(&[run(1.0, Some(1.0))], 0.895, 60.0).unwrap();
        assert_eq!(r.to_csv().unwrap(), "d\\f,1.5\n0.5,1.0000\n");
    }
}
