use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::config::ExperimentConfig;
use super::report::{append_jsonl, read_jsonl, truncate_jsonl, EpochRecord, TrainingReport};
use crate::agent::Trainer;
use crate::error::{Error, Result};
use crate::gbmdp::GbmdpFamily;

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.dir.join("timing.jsonl")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.txt")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn checkpoint(&self, epochs_done: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epochs_done:05}.bin"))
    }

    /// Checkpoint with the most completed epochs, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoints();
        if !dir.exists() {
            return Ok(None);
        }
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch-"))
                .and_then(|n| n.strip_suffix(".bin"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(k) = epoch {
                if best.as_ref().is_none_or(|(b, _)| k > *b) {
                    best = Some((k, path));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

/// Wall-clock record, kept apart from the metrics so those stay reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub seconds: f64,
}

/// Builds the family a config describes.
pub fn family_for(config: &ExperimentConfig) -> Result<GbmdpFamily> {
    GbmdpFamily::generate(&config.family, config.family_seed())
}

/// Trains `config` writing logs and checkpoints under `paths`. With
/// `resume`, continues from the latest checkpoint and trims the logs to it.
pub fn train(config: &ExperimentConfig, paths: &RunPaths, resume: bool) -> Result<TrainingReport> {
    fs::create_dir_all(paths.checkpoints())?;
    let mut trainer = match (resume, paths.latest_checkpoint()?) {
        (true, Some(path)) => {
            let t = checkpoint::load_for(&path, config)?;
            truncate_jsonl(&paths.metrics(), t.epoch())?;
            truncate_jsonl(&paths.timing(), t.epoch())?;
            t
        }
        _ => {
            for p in [paths.metrics(), paths.timing()] {
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
            Trainer::new(config.clone(), family_for(config)?)?
        }
    };
    fs::write(paths.config(), config.to_toml_string()?)?;
    while !trainer.is_done() {
        let start = Instant::now();
        let record = trainer.run_epoch()?;
        append_jsonl(&paths.metrics(), &record)?;
        append_jsonl(&paths.timing(), &TimingRecord { epoch: record.epoch, seconds: start.elapsed().as_secs_f64() })?;
        let done = trainer.epoch();
        if done % config.checkpoint_every == 0 || trainer.is_done() {
            checkpoint::save(&paths.checkpoint(done), &trainer)?;
        }
    }
    let report = TrainingReport { records: read_jsonl::<EpochRecord>(&paths.metrics())? };
    if report.records.len() != config.epochs {
        return Err(Error::Invalid(format!(
            "metrics log holds {} records, expected {}",
            report.records.len(),
            config.epochs
        )));
    }
    fs::write(paths.summary(), report.summary_table())?;
    Ok(report)
}

/// Directory for `name` under `root`.
pub fn run_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}
