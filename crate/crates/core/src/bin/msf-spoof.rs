use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use msf_spoof::defaults::defaults;
use msf_spoof::experiment::{run_experiment, verify_run, ExperimentConfig, ExperimentKind};
use msf_spoof::trace::{generate_synthetic_trace, inject_unconfident_periods, write_trace, Scenario, UnconfidentPeriod};
use msf_spoof::Error;

const MPH_TO_MPS: f64 = 0.44704;

#[derive(Parser)]
#[command(name = "msf-spoof", version, about = "GPS spoofing attacks against multi-sensor-fusion localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic straight-road trace as JSONL (gzip when the path ends in .gz).
    GenTrace {
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long, default_value_t = 45.0)]
        speed_mph: f64,
        /// Heading in radians.
        #[arg(long, default_value_t = 0.0)]
        heading: f64,
        /// Sensor noise seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Perfect sensors.
        #[arg(long)]
        noise_free: bool,
        /// Unconfident LiDAR period as start:end:var_scale:bias_sigma; repeatable.
        #[arg(long = "unconfident", value_parser = parse_period)]
        unconfident: Vec<UnconfidentPeriod>,
        /// Seed for the period biases.
        #[arg(long, default_value_t = 99)]
        injection_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Run offline parameter profiling with the settings of a config file.
    Profile { config: PathBuf },
    /// Check a finished run against its manifest and print its report.
    Report { output_dir: PathBuf },
}

fn parse_period(s: &str) -> Result<UnconfidentPeriod, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(format!("expected start:end:scale:bias, got `{s}`"));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    if !(v[0] < v[1]) {
        return Err(format!("period start {} must precede end {}", v[0], v[1]));
    }
    if !(v[2] >= 1.0) || !(v[3] >= 0.0) {
        return Err("scale must be >= 1 and bias >= 0".into());
    }
    Ok(UnconfidentPeriod {
        start: v[0],
        end: v[1],
        lidar_var_scale: v[2],
        lidar_bias_sigma: v[3],
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Parse { .. } | Error::Argument(_) => 1,
        _ => 2,
    }
}

fn gen_trace(
    duration: f64,
    speed_mph: f64,
    heading: f64,
    seed: u64,
    noise_free: bool,
    periods: &[UnconfidentPeriod],
    injection_seed: u64,
    out: &Path,
) -> msf_spoof::Result<()> {
    let scenario = Scenario {
        speed_mps: speed_mph * MPH_TO_MPS,
        heading,
    };
    let mut noise = defaults().noise;
    noise.seed = seed;
    if noise_free {
        noise = noise.noise_free();
    }
    let mut trace = generate_synthetic_trace(duration, &scenario, &noise)?;
    if !periods.is_empty() {
        trace = inject_unconfident_periods(&trace, periods, injection_seed)?;
    }
    write_trace(&trace, out)?;
    info!("wrote {} events to {}", trace.len(), out.display());
    Ok(())
}

fn run(path: &Path, force: Option<ExperimentKind>) -> msf_spoof::Result<()> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(kind) = force {
        cfg.experiment = kind;
    }
    info!("running {} into {}", cfg.experiment.name(), cfg.output_dir.display());
    let summary = run_experiment(&cfg)?;
    println!("{}", summary.output_dir.display());
    for f in &summary.files {
        println!("  {f}");
    }
    Ok(())
}

fn report(dir: &Path) -> msf_spoof::Result<()> {
    let v = verify_run(dir)?;
    println!("experiment {} ({} {})", v.manifest.experiment, v.manifest.tool, v.manifest.version);
    println!("config sha256 {}", v.manifest.config_sha256);
    println!("runs {}", v.manifest.runs);
    for f in &v.manifest.files {
        let ok = if v.mismatched.contains(&f.name) { "MODIFIED" } else { "ok" };
        println!("  {:<24} {:>10} bytes  {}", f.name, f.bytes, ok);
    }
    println!("{}", serde_json::to_string_pretty(&v.report)?);
    if !v.mismatched.is_empty() {
        return Err(Error::validation(
            "output_dir",
            format!("{} file(s) differ from the manifest", v.mismatched.len()),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenTrace {
            duration,
            speed_mph,
            heading,
            seed,
            noise_free,
            unconfident,
            injection_seed,
            out,
        } => gen_trace(duration, speed_mph, heading, seed, noise_free, &unconfident, injection_seed, &out),
        Command::Run { config } => run(&config, None),
        Command::Profile { config } => run(&config, Some(ExperimentKind::Profile)),
        Command::Report { output_dir } => report(&output_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
