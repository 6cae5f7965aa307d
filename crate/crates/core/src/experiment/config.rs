use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::analysis::{goal_thresholds, RoadGeometry, RoadType};
use crate::attack::{Side, SpoofErrorModel};
use crate::defaults::{defaults_toml, AttackDefaults, KfSettings};
use crate::error::{Error, Result};
use crate::profiler::ProfilingConfig;
use crate::trace::{DemoTraceSpec, NoiseModel, Scenario};
use crate::vehicle::ControllerConfig;

pub const OUTPUT_DIR_ENV: &str = "MSF_SPOOF_OUTPUT_DIR";
pub const THREADS_ENV: &str = "MSF_SPOOF_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    UpperBound,
    RipperGrid,
    Ablation,
    RandomBaseline,
    Robustness,
    ClosedLoop,
    Profile,
}

impl ExperimentKind {
    pub const NAMES: [&'static str; 7] = [
        "UPPER_BOUND",
        "RIPPER_GRID",
        "ABLATION",
        "RANDOM_BASELINE",
        "ROBUSTNESS",
        "CLOSED_LOOP",
        "PROFILE",
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        let all = [
            Self::UpperBound,
            Self::RipperGrid,
            Self::Ablation,
            Self::RandomBaseline,
            Self::Robustness,
            Self::ClosedLoop,
            Self::Profile,
        ];
        Self::NAMES.iter().position(|n| *n == name).map(|i| all[i])
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

/// Built-in trace generated from the `[demo]`, `[scenario]` and `[noise]`
/// sections when no file is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// With periodic unconfident LiDAR periods.
    Demo,
    /// Without unconfident periods.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// JSONL trace file; relative paths resolve against the config file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticKind,
    /// Zero sensor noise for the synthetic trace.
    pub noise_free: bool,
    /// Drop LiDAR fixes before attacking.
    pub gps_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    TouchLaneLine,
    OffRoad,
    WrongWay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSettings {
    pub sides: Vec<Side>,
    pub road: RoadType,
    pub goal: Goal,
    /// Seconds within which the goal must be reached.
    pub min_duration: f64,
    pub grid_d: Vec<f64>,
    pub grid_f: Vec<f64>,
    /// Fixed parameters for single-cell campaigns; the grid best is used
    /// when absent.
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub f: Option<f64>,
    pub random_trials: usize,
    pub robustness_repetitions: usize,
    pub robustness_multipliers: Vec<f64>,
    pub upper_bound_stride: usize,
    pub seed: u64,
}

impl CampaignSettings {
    pub fn geometry(&self) -> RoadGeometry {
        match self.road {
            RoadType::Local => RoadGeometry::local(),
            RoadType::Highway => RoadGeometry::highway(),
        }
    }

    /// Goal distances tracked by every run, ascending.
    pub fn tracked_goals(&self) -> Vec<f64> {
        let g = goal_thresholds(&self.geometry());
        let mut v = vec![g.touch_lane_line, g.off_road, g.wrong_way];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn goal_value(&self) -> f64 {
        let g = goal_thresholds(&self.geometry());
        match self.goal {
            Goal::TouchLaneLine => g.touch_lane_line,
            Goal::OffRoad => g.off_road,
            Goal::WrongWay => g.wrong_way,
        }
    }

    pub fn fixed_cell(&self) -> Option<(f64, f64)> {
        self.d.zip(self.f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    pub trace: TraceSource,
    pub kf: KfSettings,
    pub noise: NoiseModel,
    pub scenario: Scenario,
    pub attack: AttackDefaults,
    pub spoof_error: SpoofErrorModel,
    pub controller: ControllerConfig,
    pub profiling: ProfilingConfig,
    pub demo: DemoTraceSpec,
    pub campaign: CampaignSettings,
}

/// Keys a config may set that have no built-in default.
const OPTIONAL_KEYS: [&str; 5] = ["threads", "trace.path", "campaign.d", "campaign.f", "output_dir"];

const TRACE_DEFAULTS: &str = r#"
[trace]
synthetic = "demo"
noise_free = false
gps_only = false
"#;

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        message: e.message().to_string(),
    })
}

fn base_table() -> Table {
    let mut t = parse_table(defaults_toml()).expect("embedded defaults parse");
    t.extend(parse_table(TRACE_DEFAULTS).expect("trace defaults parse"));
    t
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

/// Rejects keys without a default and values whose type differs from it.
fn check_keys(user: &Table, base: &Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match base.get(key) {
            None if OPTIONAL_KEYS.contains(&path.as_str()) || path == "experiment" => {}
            None => return Err(Error::validation(path, "unknown field")),
            Some(Value::Table(b)) => match value {
                Value::Table(u) => check_keys(u, b, &path)?,
                other => {
                    return Err(Error::validation(
                        path,
                        format!("expected table, found {}", type_name(other)),
                    ))
                }
            },
            // Enum-valued fields may be written as strings or tables.
            Some(Value::String(_)) => {}
            Some(b) => {
                let ok = type_name(b) == type_name(value)
                    || matches!((b, value), (Value::Float(_), Value::Integer(_)));
                if !ok {
                    return Err(Error::validation(
                        path,
                        format!("expected {}, found {}", type_name(b), type_name(value)),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Table, user: Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Name of the first field the deserializer complained about, if any.
fn field_in_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

impl ExperimentConfig {
    /// Parses a config, layering it over the built-in defaults. Relative
    /// paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let user = parse_table(text)?;
        match user.get("experiment") {
            None => return Err(Error::validation("experiment", "missing")),
            Some(Value::String(name)) => {
                if ExperimentKind::from_name(name).is_none() {
                    return Err(Error::validation(
                        "experiment",
                        format!("unknown experiment `{name}`; expected one of {}", ExperimentKind::NAMES.join(", ")),
                    ));
                }
            }
            Some(other) => {
                return Err(Error::validation(
                    "experiment",
                    format!("expected string, found {}", type_name(other)),
                ))
            }
        }
        if !user.contains_key("output_dir") {
            return Err(Error::validation("output_dir", "missing"));
        }
        let mut merged = base_table();
        check_keys(&user, &merged, "")?;
        merge(&mut merged, user);
        let mut cfg: ExperimentConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            Error::validation(field_in_message(&msg).unwrap_or_else(|| "config".into()), msg)
        })?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        if let Some(p) = cfg.trace.path.as_mut() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Reads a config file and applies the environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml_str(&text, base)?;
        cfg.apply_overrides(
            std::env::var(OUTPUT_DIR_ENV).ok().as_deref(),
            std::env::var(THREADS_ENV).ok().as_deref(),
        )?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, output_dir: Option<&str>, threads: Option<&str>) -> Result<()> {
        if let Some(dir) = output_dir.filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(n) = threads.filter(|n| !n.is_empty()) {
            self.threads = n
                .parse()
                .map_err(|_| Error::validation(THREADS_ENV, format!("expected a non-negative integer, got `{n}`")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.kf.to_config().validate()?;
        self.noise.validate()?;
        self.controller.validate()?;
        self.profiling.validate()?;
        self.spoof_error.validate()?;
        let a = &self.attack;
        for (path, v) in [
            ("attack.trigger_threshold", a.trigger_threshold),
            ("attack.max_duration", a.max_duration),
            ("attack.random_range_max", a.random_range_max),
            ("attack.search_step", a.search_step),
            ("attack.search_max", a.search_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(path, "must be finite and > 0"));
            }
        }
        if a.search_points < 3 {
            return Err(Error::validation("attack.search_points", "must be >= 3"));
        }
        let d = &self.demo;
        if !(d.duration > 0.0 && d.warmup >= 0.0 && d.start_spacing > 0.0) {
            return Err(Error::validation("demo", "requires duration > 0, warmup >= 0, start_spacing > 0"));
        }
        let c = &self.campaign;
        if c.sides.is_empty() {
            return Err(Error::validation("campaign.sides", "must not be empty"));
        }
        if c.sides.len() == 2 && c.sides[0] == c.sides[1] {
            return Err(Error::validation("campaign.sides", "must not repeat a side"));
        }
        if c.sides.len() > 2 {
            return Err(Error::validation("campaign.sides", "at most two sides"));
        }
        if !(c.min_duration > 0.0) {
            return Err(Error::validation("campaign.min_duration", "must be > 0"));
        }
        if c.min_duration > a.max_duration + 1e-9 {
            return Err(Error::validation("campaign.min_duration", "must not exceed attack.max_duration"));
        }
        for (path, grid) in [("campaign.grid_d", &c.grid_d), ("campaign.grid_f", &c.grid_f)] {
            if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::validation(path, "must be non-empty and strictly ascending"));
            }
        }
        if c.grid_d[0] <= 0.0 {
            return Err(Error::validation("campaign.grid_d", "values must be > 0"));
        }
        if c.grid_f[0] < 1.0 {
            return Err(Error::validation("campaign.grid_f", "values must be >= 1"));
        }
        if c.d.is_some() != c.f.is_some() {
            return Err(Error::validation("campaign.d", "d and f must be given together"));
        }
        if let Some((d, f)) = c.fixed_cell() {
            if !(d > 0.0) {
                return Err(Error::validation("campaign.d", "must be > 0"));
            }
            if !(f >= 1.0) {
                return Err(Error::validation("campaign.f", "must be >= 1"));
            }
        }
        if c.random_trials == 0 {
            return Err(Error::validation("campaign.random_trials", "must be > 0"));
        }
        if c.robustness_repetitions == 0 {
            return Err(Error::validation("campaign.robustness_repetitions", "must be > 0"));
        }
        if c.robustness_multipliers.is_empty() || c.robustness_multipliers.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::validation("campaign.robustness_multipliers", "must be non-empty and >= 0"));
        }
        if c.upper_bound_stride == 0 {
            return Err(Error::validation("campaign.upper_bound_stride", "must be > 0"));
        }
        if let Some(p) = &self.trace.path {
            if !p.is_file() {
                return Err(Error::validation("trace.path", format!("{} does not exist", p.display())));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::validation("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Config fields that determine the results, as canonical JSON.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("threads");
        }
        Ok(serde_json::to_string(&v)?)
    }
}
