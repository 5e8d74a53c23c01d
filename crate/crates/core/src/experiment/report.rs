use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Metrics for one training epoch. Evaluation fields are `None` on epochs
/// that skip evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub schema_version: u32,
    pub epoch: usize,
    pub env_steps: u64,
    pub epsilon: f64,
    pub aligned_records: usize,
    pub loss_recon: f64,
    pub loss_kl: f64,
    pub loss_mmd: f64,
    pub loss_diff: f64,
    pub loss_vae_total: f64,
    pub loss_td: f64,
    pub eval: Option<EvalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub train_success: Vec<f64>,
    pub train_distance: Vec<f64>,
    pub test_success: Vec<f64>,
    pub test_distance: Vec<f64>,
    pub mean_train_success: f64,
    pub mean_test_success: f64,
    pub ler_train: f64,
    pub ler_test: f64,
    pub ler_excluded: usize,
    pub eta_train: f64,
    pub psi_train: f64,
    pub eta_test: f64,
    pub psi_test: f64,
    pub max_distortion: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub records: Vec<EpochRecord>,
}

impl TrainingReport {
    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.records.iter().rev().find_map(|r| r.eval.as_ref())
    }

    /// Human-readable table of evaluated epochs.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>10} {:>10} {:>9} {:>9} {:>8} {:>8} {:>10} {:>10}",
            "epoch", "train_succ", "test_succ", "ler_train", "ler_test", "eta", "psi", "mmd", "td"
        );
        for r in &self.records {
            if let Some(e) = &r.eval {
                let _ = writeln!(
                    s,
                    "{:>6} {:>10.3} {:>10.3} {:>9.4} {:>9.4} {:>8.4} {:>8.4} {:>10.3e} {:>10.3e}",
                    r.epoch,
                    e.mean_train_success,
                    e.mean_test_success,
                    e.ler_train,
                    e.ler_test,
                    e.eta_train,
                    e.psi_train,
                    r.loss_mmd,
                    r.loss_td
                );
            }
        }
        s
    }
}

/// Appends one JSON line and flushes.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Reads every complete record. A trailing line without a newline, or one
/// that fails to parse at the end of the file, is treated as a torn write and
/// dropped; malformed lines elsewhere are errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut pending_error = None;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(e) = pending_error.take() {
            return Err(e);
        }
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(v) => out.push(v),
            Err(e) => pending_error = Some(e.into()),
        }
    }
    Ok(out)
}

/// Rewrites `path` keeping only the first `keep` complete lines, byte for
/// byte; used when resuming so the log matches the checkpoint.
pub fn truncate_jsonl(path: &Path, keep: usize) -> Result<()> {
    let text = if path.exists() { std::fs::read_to_string(path)? } else { String::new() };
    let kept: String = text.split_inclusive('\n').filter(|l| l.ends_with('\n')).take(keep).collect();
    std::fs::write(path, kept)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: u32,
    }

    #[test]
    fn partial_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        append_jsonl(&p, &Row { a: 1 }).unwrap();
        append_jsonl(&p, &Row { a: 2 }).unwrap();
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"a\": 3").unwrap();
        let rows: Vec<Row> = read_jsonl(&p).unwrap();
        assert_eq!(rows, vec![Row { a: 1 }, Row { a: 2 }]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "{\"a\":1}\nnot json\n{\"a\":2}\n").unwrap();
        assert!(read_jsonl::<Row>(&p).is_err());
        std::fs::write(&p, "{\"a\":1}\n{\"a\":\n").unwrap();
        assert_eq!(read_jsonl::<Row>(&p).unwrap(), vec![Row { a: 1 }]);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        for a in 0..4 {
            append_jsonl(&p, &Row { a }).unwrap();
        }
        truncate_jsonl(&p, 2).unwrap();
        assert_eq!(read_jsonl::<Row>(&p).unwrap(), vec![Row { a: 0 }, Row { a: 1 }]);
    }
}
