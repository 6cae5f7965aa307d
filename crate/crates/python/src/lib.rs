//! Python bindings for the msf-spoof library.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use msf_spoof::analysis::{self, RoadGeometry};
use msf_spoof::attack::{AttackBench, AttackOutcome, Side};
use msf_spoof::experiment::{run_experiment, verify_run, ExperimentConfig};
use msf_spoof::msf::KfConfig;
use msf_spoof::trace::{generate_synthetic_trace, read_trace, write_trace, DemoTraceSpec, NoiseModel, Scenario, Trace};
use msf_spoof::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Argument(_)
        | Error::Validation { .. }
        | Error::Parse { .. }
        | Error::EmptyInput(_)
        | Error::DegenerateInput(_)
        | Error::NumericInput(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn side(name: &str) -> PyResult<Side> {
    match name {
        "left" => Ok(Side::Left),
        "right" => Ok(Side::Right),
        other => Err(PyValueError::new_err(format!("side must be 'left' or 'right', got {other:?}"))),
    }
}

fn synthetic(duration: f64, demo: bool, noise_free: bool, seed: Option<u64>) -> msf_spoof::Result<Trace> {
    let mut noise = NoiseModel::default();
    if let Some(s) = seed {
        noise.seed = s;
    }
    if noise_free {
        noise = noise.noise_free();
    }
    let scenario = Scenario::default();
    if demo {
        DemoTraceSpec { duration, ..DemoTraceSpec::default() }.build(&scenario, &noise)
    } else {
        generate_synthetic_trace(duration, &scenario, &noise)
    }
}

fn outcome_dict<'py>(py: Python<'py>, o: &AttackOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("start_time", o.start_time)?;
    d.set_item("side", if o.side == Side::Left { "left" } else { "right" })?;
    d.set_item("d", o.d)?;
    d.set_item("f", o.f)?;
    d.set_item("stage2_time", o.stage2_time)?;
    d.set_item("max_deviation", o.max_deviation)?;
    d.set_item("fitted_base", o.fitted_base)?;
    d.set_item("deviation_series", o.deviation_series.clone())?;
    let success: Vec<(f64, Option<f64>)> = o.success.iter().map(|g| (g.goal, g.time)).collect();
    d.set_item("success", success)?;
    Ok(d)
}

/// A trace together with the fusion filter that replays it.
#[pyclass(module = "msf_spoof", frozen)]
struct Bench {
    inner: AttackBench,
}

#[pymethods]
impl Bench {
    /// Loads `trace_path`, or synthesizes a straight-road trace when it is
    /// omitted. `demo` adds the periodic unconfident LiDAR periods.
    #[new]
    #[pyo3(signature = (trace_path=None, *, duration=600.0, demo=true, noise_free=false, gps_only=false, seed=None))]
    fn new(
        py: Python<'_>,
        trace_path: Option<PathBuf>,
        duration: f64,
        demo: bool,
        noise_free: bool,
        gps_only: bool,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        py.detach(|| {
            let trace = match trace_path {
                Some(p) => read_trace(p)?,
                None => synthetic(duration, demo, noise_free, seed)?,
            };
            let trace = if gps_only { trace.without_lidar() } else { trace };
            AttackBench::new(Arc::new(trace), KfConfig::default())
        })
        .map(|inner| Self { inner })
        .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.trace().len()
    }

    /// Number of events of one kind: "imu", "gps", "lidar" or "truth".
    fn count(&self, kind: &str) -> usize {
        self.inner.trace().count(kind)
    }

    fn gps_epoch_times(&self) -> Vec<f64> {
        self.inner.gps_epoch_times()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_trace(self.inner.trace(), path).map_err(to_py)
    }

    /// Two-stage attack from the GPS epoch at `start_time`.
    #[pyo3(signature = (start_time, d, f, side="left", max_duration=None))]
    fn fusion_ripper<'py>(
        &self,
        py: Python<'py>,
        start_time: f64,
        d: f64,
        f: f64,
        side: &str,
        max_duration: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut cfg = self.inner.attack_config(d, f, self::side(side)?);
        if let Some(m) = max_duration {
            cfg.max_duration = m;
        }
        let out = py.detach(|| self.inner.fusion_ripper(start_time, &cfg)).map_err(to_py)?;
        outcome_dict(py, &out)
    }

    /// Uniformly random spoofing distances in `[0, range_max)`.
    #[pyo3(signature = (start_time, range_max, seed, side="left", max_duration=None))]
    fn random_attack<'py>(
        &self,
        py: Python<'py>,
        start_time: f64,
        range_max: f64,
        seed: u64,
        side: &str,
        max_duration: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut cfg = self.inner.attack_config(0.0, 1.0, self::side(side)?);
        if let Some(m) = max_duration {
            cfg.max_duration = m;
        }
        let out = py
            .detach(|| self.inner.random_attack(start_time, &cfg, range_max, seed))
            .map_err(to_py)?;
        outcome_dict(py, &out)
    }
}

/// Lateral deviations needed to touch the lane line, leave the road or
/// enter the opposite lane, for "local" or "highway" roads.
#[pyfunction]
fn goal_thresholds<'py>(py: Python<'py>, road: &str) -> PyResult<Bound<'py, PyDict>> {
    let geom = match road {
        "local" => RoadGeometry::local(),
        "highway" => RoadGeometry::highway(),
        other => return Err(PyValueError::new_err(format!("road must be 'local' or 'highway', got {other:?}"))),
    };
    let g = analysis::goal_thresholds(&geom);
    let d = PyDict::new(py);
    d.set_item("touch_lane_line", g.touch_lane_line)?;
    d.set_item("off_road", g.off_road)?;
    d.set_item("wrong_way", g.wrong_way)?;
    Ok(d)
}

/// Least-squares fit of `a**x + b` at x = 1..n; returns (a, b, mse).
#[pyfunction]
fn fit_exponential(devs: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let fit = analysis::fit_exponential(&devs).map_err(to_py)?;
    Ok((fit.a, fit.b, fit.mse))
}

/// Pearson correlation; returns (r, two-sided p).
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = analysis::pearson(&xs, &ys).map_err(to_py)?;
    Ok((c.r, c.p))
}

/// Two-sided Fisher exact test on [[a, b], [c, d]]; returns (odds ratio, p).
#[pyfunction]
fn fisher_exact(table: [[u64; 2]; 2]) -> PyResult<(f64, f64)> {
    let r = analysis::fisher_exact(table).map_err(to_py)?;
    Ok((r.odds_ratio, r.p))
}

/// Runs the campaign described by a TOML config and returns the written
/// file names. Relative paths resolve against `base_dir`.
#[pyfunction]
#[pyo3(signature = (config_toml, base_dir="."))]
fn run_campaign(py: Python<'_>, config_toml: &str, base_dir: &str) -> PyResult<Vec<String>> {
    py.detach(|| {
        let cfg = ExperimentConfig::from_toml_str(config_toml, Path::new(base_dir))?;
        cfg.validate()?;
        run_experiment(&cfg)
    })
    .map(|s| s.files)
    .map_err(to_py)
}

/// Names of files in a finished run that no longer match its manifest.
#[pyfunction]
fn verify(dir: PathBuf) -> PyResult<Vec<String>> {
    verify_run(&dir).map(|v| v.mismatched).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "msf_spoof")]
fn msf_spoof_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Bench>()?;
    m.add_function(wrap_pyfunction!(goal_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(fit_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_exact, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
