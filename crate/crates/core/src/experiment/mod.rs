//! Config-driven experiment campaigns and their report files.

mod config;
mod report;
mod runner;

pub use config::{
    CampaignSettings, ExperimentConfig, ExperimentKind, Goal, SyntheticKind, TraceSource, OUTPUT_DIR_ENV,
    THREADS_ENV,
};
pub use report::{mix_seed, sha256_hex, verify_run, FileEntry, Manifest, Seeds, Verification, MANIFEST, OUTCOMES};
pub use runner::{load_trace, run_config_file, run_experiment, RunSummary};
