use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential, growth_onset, is_takeover, ExpFit};
use super::stats::{fisher_exact, pearson, Correlation, FisherResult};
use crate::attack::WindowLog;
use crate::error::{Error, Result};
use crate::trace::median;

/// Contributing factors of one attack window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSample {
    /// trace(P) at the onset of exponential growth.
    pub p0: f64,
    pub r_lidar: f64,
    pub delta_lidar: f64,
    pub imu: f64,
    pub takeover: bool,
}

/// Builds the factor tuple from per-epoch logs and the matching deviation
/// series. Tail means run from the growth onset to the end of the window.
pub fn extract_factors(logs: &[WindowLog], devs: &[f64]) -> Result<FactorSample> {
    if logs.is_empty() {
        return Err(Error::Argument("empty window log".into()));
    }
    let fit = fit_exponential(devs).unwrap_or(ExpFit {
        a: 1.0,
        b: 0.0,
        mse: 0.0,
    });
    let onset = growth_onset(&fit, devs.len()).min(logs.len() - 1);
    let tail = &logs[onset..];
    let mean = |f: fn(&WindowLog) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
    Ok(FactorSample {
        p0: logs[onset].p_trace,
        r_lidar: mean(|l| l.r_lidar),
        delta_lidar: mean(|l| l.delta_lidar),
        imu: mean(|l| l.imu),
        takeover: is_takeover(fit.a),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    P0,
    RLidar,
    DeltaLidar,
    Imu,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::P0, Factor::RLidar, Factor::DeltaLidar, Factor::Imu];

    pub fn value(self, s: &FactorSample) -> f64 {
        match self {
            Factor::P0 => s.p0,
            Factor::RLidar => s.r_lidar,
            Factor::DeltaLidar => s.delta_lidar,
            Factor::Imu => s.imu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorImportance {
    pub factor: Factor,
    /// Correlation of the factor with the 0/1 take-over label.
    pub pearson: Option<Correlation>,
    /// Fisher test of above-median factor value against take-over.
    pub fisher: Option<FisherResult>,
}

/// Contingency table `[[above & takeover, above & not], [below & takeover, below & not]]`
/// where "above" means strictly greater than the sample median.
pub fn median_split_table(values: &[f64], labels: &[bool]) -> [[u64; 2]; 2] {
    let mut sorted = values.to_vec();
    let m = median(&mut sorted);
    let mut t = [[0u64; 2]; 2];
    for (v, l) in values.iter().zip(labels) {
        let row = usize::from(*v <= m);
        let col = usize::from(!*l);
        t[row][col] += 1;
    }
    t
}

/// Pearson and Fisher tests of every factor against the take-over label.
/// Degenerate inputs leave the corresponding test empty.
pub fn factor_importance(samples: &[FactorSample]) -> Vec<FactorImportance> {
    let labels: Vec<bool> = samples.iter().map(|s| s.takeover).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    Factor::ALL
        .iter()
        .map(|&factor| {
            let xs: Vec<f64> = samples.iter().map(|s| factor.value(s)).collect();
            FactorImportance {
                factor,
                pearson: pearson(&xs, &ys).ok(),
                fisher: if xs.is_empty() {
                    None
                } else {
                    fisher_exact(median_split_table(&xs, &labels)).ok()
                },
            }
        })
        .collect()
}
