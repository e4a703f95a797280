use std::path::{Path, PathBuf};

use nlu_core::metrics::EvalReport;
use nlu_core::train::{EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub file: String,
    pub sha256: String,
}

pub fn fingerprint(path: &Path) -> CliResult<Fingerprint> {
    let bytes = std::fs::read(path).map_err(|e| nlu_core::Error::io(path, e))?;
    Ok(Fingerprint {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything needed to rerun a training job and check its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub corpora: Vec<Fingerprint>,
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub dev: EvalReport,
    pub test: Option<EvalReport>,
    pub history: Vec<EpochRecord>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub dir: PathBuf,
    pub dev_score: f64,
}

/// Multi-seed summary; `best` indexes `runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<RunEntry>,
    pub best: usize,
}

impl RunSummary {
    pub fn best_run(&self) -> &RunEntry {
        &self.runs[self.best]
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(nlu_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Core(nlu_core::Error::io(path, e)))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| nlu_core::Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(nlu_core::Error::from)?)
}
