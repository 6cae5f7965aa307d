//! Offline attack-parameter profiling with safe-threshold trials.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackBench, AttackOutcome, RunOptions, Side, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilingConfig {
    pub grid_d: Vec<f64>,
    pub grid_f: Vec<f64>,
    pub trials_per_round: usize,
    pub min_success_rate: f64,
    pub safe_threshold: f64,
    pub trial_cap: f64,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        crate::defaults::defaults().profiling.clone()
    }
}

impl ProfilingConfig {
    pub fn validate(&self) -> Result<()> {
        for (path, grid) in [("profiling.grid_d", &self.grid_d), ("profiling.grid_f", &self.grid_f)] {
            if grid.is_empty() {
                return Err(Error::validation(path, "must not be empty"));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(path, "must be strictly ascending"));
            }
        }
        if self.trials_per_round == 0 {
            return Err(Error::validation("profiling.trials_per_round", "must be > 0"));
        }
        if !(self.min_success_rate > 0.0 && self.min_success_rate <= 1.0) {
            return Err(Error::validation("profiling.min_success_rate", "must lie in (0, 1]"));
        }
        if !(self.safe_threshold > 0.0) {
            return Err(Error::validation("profiling.safe_threshold", "must be > 0"));
        }
        if !(self.trial_cap > 0.0) {
            return Err(Error::validation("profiling.trial_cap", "must be > 0"));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.grid_d.len() * self.grid_f.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilingResult {
    pub d: f64,
    pub f: f64,
    /// Total number of attack trials spent.
    pub cost: usize,
    pub best_rate: f64,
    /// True when no cell reached the minimum success rate.
    pub exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub d: f64,
    pub f: f64,
    pub successes: usize,
    pub rate: f64,
}

/// Scans `f` (outer) and `d` (inner) in ascending order, spending
/// `trials_per_round` trials per cell, and stops at the first cell whose
/// success rate reaches `min_success_rate`.
pub fn offline_profile<F>(trial_runner: F, cfg: &ProfilingConfig) -> Result<ProfilingResult>
where
    F: FnMut(f64, f64, usize, f64) -> Result<usize>,
{
    offline_profile_logged(trial_runner, cfg).map(|(r, _)| r)
}

pub fn offline_profile_logged<F>(mut trial_runner: F, cfg: &ProfilingConfig) -> Result<(ProfilingResult, Vec<RoundRecord>)>
where
    F: FnMut(f64, f64, usize, f64) -> Result<usize>,
{
    cfg.validate()?;
    let n = cfg.trials_per_round;
    let mut rounds = Vec::new();
    let mut best = ProfilingResult {
        d: cfg.grid_d[0],
        f: cfg.grid_f[0],
        cost: 0,
        best_rate: 0.0,
        exhausted: true,
    };
    let mut cost = 0;
    for &f in &cfg.grid_f {
        for &d in &cfg.grid_d {
            let successes = trial_runner(d, f, n, cfg.safe_threshold)?;
            if successes > n {
                return Err(Error::Contract(format!(
                    "trial runner reported {successes} successes out of {n} trials"
                )));
            }
            cost += n;
            let rate = successes as f64 / n as f64;
            rounds.push(RoundRecord { d, f, successes, rate });
            if rate >= cfg.min_success_rate {
                let result = ProfilingResult {
                    d,
                    f,
                    cost,
                    best_rate: rate,
                    exhausted: false,
                };
                return Ok((result, rounds));
            }
            if rate > best.best_rate {
                best.d = d;
                best.f = f;
                best.best_rate = rate;
            }
        }
    }
    best.cost = cost;
    Ok((best, rounds))
}

/// CSV session log with one row per profiling round.
pub fn rounds_to_csv(rounds: &[RoundRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rounds {
        w.serialize(r).map_err(|e| Error::Argument(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A two-stage attack that falls back to authentic GPS once the deviation
/// reaches the safe threshold.
pub fn safe_trial_outcome(
    bench: &AttackBench,
    start: f64,
    d: f64,
    f: f64,
    side: Side,
    cfg: &ProfilingConfig,
) -> Result<AttackOutcome> {
    let mut attack = bench.attack_config(d, f, side);
    attack.max_duration = cfg.trial_cap;
    attack.validate()?;
    let opts = RunOptions {
        stop_at: Some(cfg.safe_threshold),
        ..RunOptions::new(Strategy::FusionRipper).with_goals(vec![cfg.safe_threshold])
    };
    bench.run(start, &attack, &opts)
}

/// Whether the safe threshold was reached within the trial cap.
pub fn safe_trial(bench: &AttackBench, start: f64, d: f64, f: f64, side: Side, cfg: &ProfilingConfig) -> Result<bool> {
    let out = safe_trial_outcome(bench, start, d, f, side, cfg)?;
    Ok(out.success_time(cfg.safe_threshold).is_some())
}

/// Runs each round's trials at uniformly drawn start epochs and sides.
pub struct TrialSampler<'a> {
    bench: &'a AttackBench,
    starts: Vec<f64>,
    cfg: ProfilingConfig,
    rng: ChaCha8Rng,
}

impl<'a> TrialSampler<'a> {
    pub fn new(bench: &'a AttackBench, starts: Vec<f64>, cfg: &ProfilingConfig, seed: u64) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::EmptyInput("no eligible profiling start epochs".into()));
        }
        Ok(Self {
            bench,
            starts,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn run_round(&mut self, d: f64, f: f64, n: usize, threshold: f64) -> Result<usize> {
        let cfg = ProfilingConfig {
            safe_threshold: threshold,
            ..self.cfg.clone()
        };
        let draws: Vec<(f64, Side)> = (0..n)
            .map(|_| {
                let start = *self.starts.choose(&mut self.rng).expect("starts are non-empty");
                let side = if self.rng.random::<bool>() { Side::Left } else { Side::Right };
                (start, side)
            })
            .collect();
        let mut successes = 0;
        for (start, side) in draws {
            if safe_trial(self.bench, start, d, f, side, &cfg)? {
                successes += 1;
            }
        }
        Ok(successes)
    }
}
