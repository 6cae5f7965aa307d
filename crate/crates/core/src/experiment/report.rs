use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::runner::RunSummary;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const OUTCOMES: &str = "outcomes.jsonl";

pub(crate) fn csv_err(e: impl Display) -> Error {
    Error::Argument(format!("csv: {e}"))
}

/// Derives an independent seed from a base seed and a path of indices.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(base), |acc, p| splitmix(acc ^ splitmix(*p)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub noise: u64,
    pub injection: u64,
    pub campaign: u64,
    pub spoof_error: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    /// SHA-256 of the trace file, when one was given.
    pub trace_sha256: Option<String>,
    /// Rows in the outcomes file; each carries a `run` index below this.
    pub runs: usize,
    pub files: Vec<FileEntry>,
    /// The resolved config the run used.
    pub config: serde_json::Value,
}

/// Report files collected in memory and written in one step.
pub(crate) struct OutputSet {
    dir: PathBuf,
    outcomes: String,
    runs: usize,
    files: BTreeMap<String, Vec<u8>>,
}

fn check_output_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::validation("output_dir", format!("{} is not a directory", dir.display())));
        }
        let empty = fs::read_dir(dir)?.next().is_none();
        if !empty && !dir.join(MANIFEST).is_file() {
            return Err(Error::validation(
                "output_dir",
                format!("{} holds files that are not from a previous run", dir.display()),
            ));
        }
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| Error::validation("output_dir", format!("cannot create {}: {e}", parent.display())))?;
    let probe = tempfile::Builder::new()
        .prefix(".msf-spoof-probe")
        .tempfile_in(parent)
        .map_err(|e| Error::validation("output_dir", format!("{} is not writable: {e}", parent.display())))?;
    drop(probe);
    Ok(())
}

impl OutputSet {
    pub(crate) fn new(cfg: &ExperimentConfig) -> Result<Self> {
        check_output_dir(&cfg.output_dir)?;
        Ok(Self {
            dir: cfg.output_dir.clone(),
            outcomes: String::new(),
            runs: 0,
            files: BTreeMap::new(),
        })
    }

    pub(crate) fn next_run(&mut self) -> usize {
        self.runs += 1;
        self.runs - 1
    }

    pub(crate) fn outcome<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.outcomes.push_str(&serde_json::to_string(row)?);
        self.outcomes.push('\n');
        Ok(())
    }

    pub(crate) fn text(&mut self, name: &str, body: String) {
        self.files.insert(name.to_string(), body.into_bytes());
    }

    pub(crate) fn csv(&mut self, name: &str, w: csv::Writer<Vec<u8>>) -> Result<()> {
        let bytes = w.into_inner().map_err(csv_err)?;
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    pub(crate) fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.files.insert(name.to_string(), body.into_bytes());
        Ok(())
    }

    /// Writes every file plus the manifest into a sibling temporary
    /// directory, then moves it into place.
    pub(crate) fn commit(mut self, cfg: &ExperimentConfig) -> Result<RunSummary> {
        let outcomes = std::mem::take(&mut self.outcomes);
        self.files.insert(OUTCOMES.to_string(), outcomes.into_bytes());
        let trace_sha256 = match &cfg.trace.path {
            Some(p) => Some(sha256_hex(&fs::read(p)?)),
            None => None,
        };
        let canonical = cfg.canonical_json()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: cfg.experiment.name().to_string(),
            config_sha256: sha256_hex(canonical.as_bytes()),
            seeds: Seeds {
                noise: cfg.noise.seed,
                injection: cfg.demo.injection_seed,
                campaign: cfg.campaign.seed,
                spoof_error: cfg.spoof_error.seed,
            },
            trace_sha256,
            runs: self.runs,
            files: self
                .files
                .iter()
                .map(|(name, bytes)| FileEntry {
                    name: name.clone(),
                    sha256: sha256_hex(bytes),
                    bytes: bytes.len(),
                })
                .collect(),
            config: serde_json::from_str(&canonical)?,
        };
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        self.files.insert(MANIFEST.to_string(), body.into_bytes());

        let parent = self.dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let staging = tempfile::Builder::new().prefix(".msf-spoof-run").tempdir_in(parent)?;
        for (name, bytes) in &self.files {
            fs::write(staging.path().join(name), bytes)?;
        }
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir)?;
        }
        let staged = staging.keep();
        if let Err(e) = fs::rename(&staged, &self.dir) {
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        Ok(RunSummary {
            output_dir: self.dir,
            files: self.files.into_keys().collect(),
        })
    }
}

/// Result of checking a run directory against its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub manifest: Manifest,
    /// Files whose hash or size no longer match.
    pub mismatched: Vec<String>,
    pub report: serde_json::Value,
}

pub fn verify_run(dir: &Path) -> Result<Verification> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::validation("output_dir", format!("no manifest in {}: {e}", dir.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut mismatched = Vec::new();
    for entry in &manifest.files {
        match fs::read(dir.join(&entry.name)) {
            Ok(bytes) if bytes.len() == entry.bytes && sha256_hex(&bytes) == entry.sha256 => {}
            _ => mismatched.push(entry.name.clone()),
        }
    }
    let report = match fs::read_to_string(dir.join("report.json")) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => serde_json::Value::Null,
    };
    Ok(Verification {
        manifest,
        mismatched,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_seeds_differ_and_repeat() {
        assert_eq!(mix_seed(1, &[2, 3]), mix_seed(1, &[2, 3]));
        assert_ne!(mix_seed(1, &[2, 3]), mix_seed(1, &[3, 2]));
        assert_ne!(mix_seed(1, &[0]), mix_seed(2, &[0]));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
