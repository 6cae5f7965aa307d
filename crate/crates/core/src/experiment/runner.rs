use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, SyntheticKind};
use super::report::{mix_seed, OutputSet};
use crate::analysis::{is_takeover, success_metrics, SuccessReport};
use crate::attack::{AttackBench, OutcomeSummary, RunOptions, SearchGrid, Side, SpoofErrorModel, Strategy};
use crate::error::{Error, Result};
use crate::profiler::{offline_profile_logged, rounds_to_csv, ProfilingResult, TrialSampler};
use crate::trace::{generate_synthetic_trace, read_trace, Trace};

/// Files written by a finished campaign, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

/// Loads the trace named by the config, or synthesizes it.
pub fn load_trace(cfg: &ExperimentConfig) -> Result<Trace> {
    let trace = match &cfg.trace.path {
        Some(p) => read_trace(p)?,
        None => {
            let noise = if cfg.trace.noise_free {
                cfg.noise.noise_free()
            } else {
                cfg.noise
            };
            match cfg.trace.synthetic {
                SyntheticKind::Demo => cfg.demo.build(&cfg.scenario, &noise)?,
                SyntheticKind::Plain => generate_synthetic_trace(cfg.demo.duration, &cfg.scenario, &noise)?,
            }
        }
    };
    Ok(if cfg.trace.gps_only { trace.without_lidar() } else { trace })
}

/// Everything a campaign needs besides its config.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    bench: AttackBench,
    starts: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let trace = load_trace(cfg)?;
        let kf = cfg.kf.to_config();
        kf.validate()?;
        let bench = AttackBench::new(Arc::new(trace), kf)?;
        let starts = cfg.demo.start_times(bench.trace(), cfg.attack.max_duration);
        Ok(Self { cfg, bench, starts })
    }

    fn require_starts(&self) -> Result<()> {
        if self.starts.is_empty() {
            return Err(Error::EmptyInput(
                "trace too short for any attack starting point".into(),
            ));
        }
        Ok(())
    }

    fn options(&self, strategy: Strategy) -> RunOptions {
        RunOptions::new(strategy)
            .with_goals(self.cfg.campaign.tracked_goals())
            .stop_after_goals()
    }

    fn attack(&self, d: f64, f: f64, side: Side) -> crate::attack::AttackConfig {
        let mut a = self.bench.attack_config(d, f, side);
        a.trigger_threshold = self.cfg.attack.trigger_threshold;
        a.max_duration = self.cfg.attack.max_duration;
        a
    }

    /// Runs `strategy` at (d, f) from every start on every configured side.
    fn sweep(&self, d: f64, f: f64, strategy: &Strategy, spoof_error: Option<SpoofErrorModel>) -> Result<Vec<OutcomeSummary>> {
        let jobs: Vec<(usize, f64, Side)> = self
            .starts
            .iter()
            .enumerate()
            .flat_map(|(i, s)| self.cfg.campaign.sides.iter().map(move |side| (i, *s, *side)))
            .collect();
        jobs.par_iter()
            .map(|(i, start, side)| {
                let mut opts = self.options(strategy.clone());
                opts.spoof_error = spoof_error.map(|m| SpoofErrorModel {
                    seed: mix_seed(m.seed, &[*i as u64, *side as u64]),
                    ..m
                });
                self.bench.run(*start, &self.attack(d, f, *side), &opts).map(|o| o.summary())
            })
            .collect()
    }

    fn grid(&self) -> Result<(Vec<OutcomeSummary>, SuccessReport)> {
        let c = &self.cfg.campaign;
        let mut all = Vec::new();
        for d in &c.grid_d {
            for f in &c.grid_f {
                all.extend(self.sweep(*d, *f, &Strategy::FusionRipper, None)?);
            }
        }
        let report = success_metrics(&all, c.goal_value(), c.min_duration)?;
        Ok((all, report))
    }

    /// The configured (d, f), or the grid best when none is given.
    fn cell(&self, out: &mut OutputSet) -> Result<(f64, f64)> {
        if let Some(cell) = self.cfg.campaign.fixed_cell() {
            return Ok(cell);
        }
        let (_, report) = self.grid()?;
        out.text("grid_success_rate.csv", report.to_csv()?);
        Ok((report.best.d, report.best.f))
    }

    fn rate(&self, outcomes: &[OutcomeSummary]) -> Result<f64> {
        let c = &self.cfg.campaign;
        Ok(success_metrics(outcomes, c.goal_value(), c.min_duration)?.best.rate)
    }
}

#[derive(Serialize)]
struct Row<'a, T: Serialize> {
    run: usize,
    label: &'a str,
    #[serde(flatten)]
    item: &'a T,
}

fn push_rows<T: Serialize>(out: &mut OutputSet, label: &str, items: &[T]) -> Result<()> {
    for item in items {
        let run = out.next_run();
        out.outcome(&Row { run, label, item })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct UpperBoundRow {
    window_start: f64,
    max_deviation: f64,
    fitted_base: f64,
    takeover: bool,
    max_dev_series: Vec<f64>,
    best_deltas: Vec<f64>,
}

fn upper_bound(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    let a = &ctx.cfg.attack;
    let grid = SearchGrid {
        step: a.search_step,
        max: a.search_max,
    };
    let starts = ctx
        .bench
        .window_starts(a.search_points, ctx.cfg.campaign.upper_bound_stride, 0.0);
    if starts.is_empty() {
        return Err(Error::EmptyInput("trace too short for one search window".into()));
    }
    let rows: Vec<UpperBoundRow> = starts
        .par_iter()
        .map(|s| {
            ctx.bench.exhaustive_window_search(*s, a.search_points, &grid).map(|r| UpperBoundRow {
                window_start: r.window_start,
                max_deviation: r.max_deviation(),
                fitted_base: r.fitted_base,
                takeover: is_takeover(r.fitted_base),
                max_dev_series: r.max_dev_series.clone(),
                best_deltas: r.best_deltas.clone(),
            })
        })
        .collect::<Result<_>>()?;
    push_rows(out, "window", &rows)?;
    let goals = ctx.cfg.campaign.tracked_goals();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["window_start", "max_deviation", "fitted_base", "takeover"])
        .map_err(super::report::csv_err)?;
    for r in &rows {
        csv.write_record([
            format!("{}", r.window_start),
            format!("{:.6}", r.max_deviation),
            format!("{:.6}", r.fitted_base),
            r.takeover.to_string(),
        ])
        .map_err(super::report::csv_err)?;
    }
    out.csv("upper_bound.csv", csv)?;
    let max_dev = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    let bases: Vec<f64> = rows.iter().map(|r| r.fitted_base).collect();
    out.json(
        "report.json",
        &serde_json::json!({
            "experiment": "UPPER_BOUND",
            "windows": rows.len(),
            "points_per_window": a.search_points,
            "max_deviation": max_dev,
            "min_fitted_base": bases.iter().copied().fold(f64::INFINITY, f64::min),
            "max_fitted_base": bases.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "takeover_windows": rows.iter().filter(|r| r.takeover).count(),
            "windows_reaching_goal": goals.iter().map(|g| {
                serde_json::json!({"goal": g, "windows": rows.iter().filter(|r| r.max_deviation >= *g).count()})
            }).collect::<Vec<_>>(),
        }),
    )
}

fn ripper_grid(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let (all, report) = ctx.grid()?;
    push_rows(out, "fusion_ripper", &all)?;
    out.text("success_rate.csv", report.to_csv()?);
    out.json("report.json", &report)
}

#[derive(Debug, Clone, Serialize)]
struct StrategyRow {
    strategy: &'static str,
    d: f64,
    f: f64,
    rate: f64,
    successes: usize,
    starts: usize,
    mean_time: Option<f64>,
}

fn strategy_row(ctx: &Context, name: &'static str, outcomes: &[OutcomeSummary]) -> Result<StrategyRow> {
    let c = &ctx.cfg.campaign;
    let best = success_metrics(outcomes, c.goal_value(), c.min_duration)?.best;
    Ok(StrategyRow {
        strategy: name,
        d: best.d,
        f: best.f,
        rate: best.rate,
        successes: best.successes,
        starts: best.starts,
        mean_time: best.mean_time,
    })
}

fn rows_csv(rows: &[StrategyRow]) -> Result<csv::Writer<Vec<u8>>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "d", "f", "rate", "successes", "starts"])
        .map_err(super::report::csv_err)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            format!("{}", r.d),
            format!("{}", r.f),
            format!("{:.6}", r.rate),
            r.successes.to_string(),
            r.starts.to_string(),
        ])
        .map_err(super::report::csv_err)?;
    }
    Ok(w)
}

fn ablation(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let (d, f) = ctx.cell(out)?;
    let mut rows = Vec::new();
    for (name, strategy) in [
        ("fusion_ripper", Strategy::FusionRipper),
        ("stage_one_only", Strategy::StageOneOnly),
        ("stage_two_only", Strategy::StageTwoOnly),
    ] {
        let outcomes = ctx.sweep(d, f, &strategy, None)?;
        push_rows(out, name, &outcomes)?;
        rows.push(strategy_row(ctx, name, &outcomes)?);
    }
    out.csv("ablation.csv", rows_csv(&rows)?)?;
    out.json(
        "report.json",
        &serde_json::json!({"experiment": "ABLATION", "d": d, "f": f, "rows": rows}),
    )
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    seed: u64,
    left_rate: Option<f64>,
    right_rate: Option<f64>,
    rate: f64,
}

/// Per trial, the better side's success rate over all starts; trials are
/// averaged.
fn random_baseline(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let c = &ctx.cfg.campaign;
    let range = ctx.cfg.attack.random_range_max;
    let mut trials = Vec::new();
    for trial in 0..c.random_trials {
        let trial_seed = mix_seed(c.seed, &[0x7261_6e64, trial as u64]);
        let mut rates = [None, None];
        for side in &c.sides {
            let jobs: Vec<(usize, f64)> = ctx.starts.iter().copied().enumerate().collect();
            let outcomes: Vec<OutcomeSummary> = jobs
                .par_iter()
                .map(|(i, start)| {
                    let strategy = Strategy::Random {
                        range_max: range,
                        seed: mix_seed(trial_seed, &[*i as u64, *side as u64]),
                    };
                    ctx.bench
                        .run(*start, &ctx.attack(1.0, 1.0, *side), &ctx.options(strategy))
                        .map(|o| o.summary())
                })
                .collect::<Result<_>>()?;
            push_rows(out, &format!("random_trial_{trial}"), &outcomes)?;
            rates[*side as usize] = Some(ctx.rate(&outcomes)?);
        }
        let rate = rates.iter().flatten().copied().fold(0.0, f64::max);
        trials.push(TrialRow {
            trial,
            seed: trial_seed,
            left_rate: rates[0],
            right_rate: rates[1],
            rate,
        });
    }
    let mean = trials.iter().map(|t| t.rate).sum::<f64>() / trials.len() as f64;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "seed", "left_rate", "right_rate", "rate"])
        .map_err(super::report::csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for t in &trials {
        w.write_record([
            t.trial.to_string(),
            t.seed.to_string(),
            opt(t.left_rate),
            opt(t.right_rate),
            format!("{:.6}", t.rate),
        ])
        .map_err(super::report::csv_err)?;
    }
    out.csv("random_trials.csv", w)?;
    out.json(
        "report.json",
        &serde_json::json!({
            "experiment": "RANDOM_BASELINE",
            "range_max": range,
            "trials": trials.len(),
            "mean_rate": mean,
            "per_trial": trials,
        }),
    )
}

#[derive(Serialize)]
struct RobustnessRow {
    multiplier: f64,
    repetitions: usize,
    mean_rate: f64,
    min_rate: f64,
    max_rate: f64,
    drop_vs_error_free: f64,
}

fn robustness(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let c = &ctx.cfg.campaign;
    let (d, f) = ctx.cell(out)?;
    let clean = ctx.sweep(d, f, &Strategy::FusionRipper, None)?;
    push_rows(out, "error_free", &clean)?;
    let clean_rate = ctx.rate(&clean)?;
    let mut rows = Vec::new();
    for (mi, m) in c.robustness_multipliers.iter().enumerate() {
        let mut rates = Vec::with_capacity(c.robustness_repetitions);
        for rep in 0..c.robustness_repetitions {
            let model = SpoofErrorModel {
                multiplier: *m,
                seed: mix_seed(c.seed, &[0x726f_6275, mi as u64, rep as u64]),
                ..ctx.cfg.spoof_error
            };
            let outcomes = ctx.sweep(d, f, &Strategy::FusionRipper, Some(model))?;
            push_rows(out, &format!("multiplier_{m}_rep_{rep}"), &outcomes)?;
            rates.push(ctx.rate(&outcomes)?);
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        rows.push(RobustnessRow {
            multiplier: *m,
            repetitions: rates.len(),
            mean_rate: mean,
            min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
            max_rate: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            drop_vs_error_free: clean_rate - mean,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["multiplier", "repetitions", "mean_rate", "min_rate", "max_rate", "drop_vs_error_free"])
        .map_err(super::report::csv_err)?;
    for r in &rows {
        w.write_record([
            format!("{}", r.multiplier),
            r.repetitions.to_string(),
            format!("{:.6}", r.mean_rate),
            format!("{:.6}", r.min_rate),
            format!("{:.6}", r.max_rate),
            format!("{:.6}", r.drop_vs_error_free),
        ])
        .map_err(super::report::csv_err)?;
    }
    out.csv("robustness.csv", w)?;
    out.json(
        "report.json",
        &serde_json::json!({
            "experiment": "ROBUSTNESS",
            "d": d,
            "f": f,
            "error_free_rate": clean_rate,
            "rows": rows,
        }),
    )
}

#[derive(Serialize)]
struct ClosedLoopRow {
    start_time: f64,
    side: Side,
    success_time: Option<f64>,
    max_physical_deviation: f64,
    max_localization_error: f64,
}

fn closed_loop(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let c = &ctx.cfg.campaign;
    let (d, f) = ctx.cell(out)?;
    let open = ctx.sweep(d, f, &Strategy::FusionRipper, None)?;
    push_rows(out, "open_loop", &open)?;
    let open_row = strategy_row(ctx, "open_loop", &open)?;
    let jobs: Vec<(f64, Side)> = ctx
        .starts
        .iter()
        .flat_map(|s| c.sides.iter().map(move |side| (*s, *side)))
        .collect();
    let runs: Vec<(OutcomeSummary, ClosedLoopRow)> = jobs
        .par_iter()
        .map(|(start, side)| {
            let r = ctx.bench.closed_loop_attack(
                *start,
                &ctx.attack(d, f, *side),
                &ctx.cfg.controller,
                &ctx.options(Strategy::FusionRipper),
            )?;
            let goal = c.goal_value();
            let row = ClosedLoopRow {
                start_time: *start,
                side: *side,
                success_time: r.outcome.success_time(goal),
                max_physical_deviation: r
                    .physical_dev_series
                    .iter()
                    .map(|(_, x)| -x * side.sign())
                    .fold(0.0, f64::max),
                max_localization_error: r.outcome.max_deviation,
            };
            Ok((r.outcome.summary(), row))
        })
        .collect::<Result<_>>()?;
    let (closed, rows): (Vec<OutcomeSummary>, Vec<ClosedLoopRow>) = runs.into_iter().unzip();
    push_rows(out, "closed_loop", &rows)?;
    let closed_row = strategy_row(ctx, "closed_loop", &closed)?;
    let table = vec![open_row, closed_row];
    out.csv("closed_loop.csv", rows_csv(&table)?)?;
    out.json(
        "report.json",
        &serde_json::json!({
            "experiment": "CLOSED_LOOP",
            "d": d,
            "f": f,
            "rows": table,
            "rate_drop": table[0].rate - table[1].rate,
        }),
    )
}

fn profile(ctx: &Context, out: &mut OutputSet) -> Result<()> {
    ctx.require_starts()?;
    let p = &ctx.cfg.profiling;
    let horizon = p.trial_cap;
    let starts = ctx.cfg.demo.start_times(ctx.bench.trace(), horizon);
    let mut sampler = TrialSampler::new(&ctx.bench, starts, p, ctx.cfg.campaign.seed)?;
    let (result, rounds): (ProfilingResult, _) =
        offline_profile_logged(|d, f, n, t| sampler.run_round(d, f, n, t), p)?;
    push_rows(out, "round", &rounds)?;
    out.text("rounds.csv", rounds_to_csv(&rounds)?);
    out.json(
        "report.json",
        &serde_json::json!({
            "experiment": "PROFILE",
            "result": result,
            "rounds": rounds.len(),
            "trials_per_round": p.trials_per_round,
        }),
    )
}

/// Runs the campaign named by `cfg` and writes its reports into
/// `cfg.output_dir`, replacing a previous run there. Nothing is left
/// behind on failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut out = OutputSet::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let result = pool.install(|| -> Result<()> {
        let ctx = Context::new(cfg)?;
        match cfg.experiment {
            ExperimentKind::UpperBound => upper_bound(&ctx, &mut out),
            ExperimentKind::RipperGrid => ripper_grid(&ctx, &mut out),
            ExperimentKind::Ablation => ablation(&ctx, &mut out),
            ExperimentKind::RandomBaseline => random_baseline(&ctx, &mut out),
            ExperimentKind::Robustness => robustness(&ctx, &mut out),
            ExperimentKind::ClosedLoop => closed_loop(&ctx, &mut out),
            ExperimentKind::Profile => profile(&ctx, &mut out),
        }
    });
    result?;
    out.commit(cfg)
}

/// Runs a config file; the entry point of the `run` subcommand.
pub fn run_config_file(path: &Path) -> Result<RunSummary> {
    let cfg = ExperimentConfig::load(path)?;
    run_experiment(&cfg)
}
