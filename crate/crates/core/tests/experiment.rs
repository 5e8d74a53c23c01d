use std::fs;
use std::path::Path;

use pasf_core::agent::Trainer;
use pasf_core::experiment::checkpoint;
use pasf_core::experiment::report::read_jsonl;
use pasf_core::experiment::run::{family_for, train, RunPaths};
use pasf_core::{EpochRecord, ExperimentConfig};

fn shipped(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn tiny() -> ExperimentConfig {
    let mut c = shipped("smoke.toml");
    c.epochs = 5;
    c.checkpoint_every = 2;
    c
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["smoke.toml", "grid_benchmark.toml"] {
        let c = shipped(name);
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again, "{name}");
    }
    assert_eq!(shipped("grid_benchmark.toml"), ExperimentConfig::grid_benchmark(0));
}

#[test]
fn resuming_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny();
    let full = RunPaths::new(dir.path().join("full"));
    let report = train(&config, &full, false).unwrap();
    assert_eq!(report.records.len(), 5);
    assert_eq!(report.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);

    // Continue in-process from the epoch-2 checkpoint.
    let mut t = checkpoint::load_for(&full.checkpoint(2), &config).unwrap();
    assert_eq!(t.epoch(), 2);
    let mut resumed = Vec::new();
    while !t.is_done() {
        resumed.push(serde_json::to_string(&t.run_epoch().unwrap()).unwrap());
    }
    let logged: Vec<String> = fs::read_to_string(full.metrics()).unwrap().lines().skip(2).map(String::from).collect();
    assert_eq!(resumed, logged);
}

#[test]
fn resume_through_the_runner_matches_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny();
    let a = RunPaths::new(dir.path().join("a"));
    let b = RunPaths::new(dir.path().join("b"));
    train(&config, &a, false).unwrap();
    train(&config, &b, false).unwrap();
    // Simulate a crash after epoch 3: the last checkpoint is epoch 4 (final),
    // drop it so the runner falls back to epoch 2.
    fs::remove_file(b.checkpoint(5)).unwrap();
    fs::remove_file(b.checkpoint(4)).unwrap();
    train(&config, &b, true).unwrap();
    assert_eq!(fs::read(a.metrics()).unwrap(), fs::read(b.metrics()).unwrap());
    let timing: Vec<serde_json::Value> = read_jsonl(&b.timing()).unwrap();
    assert_eq!(timing.len(), 5);
}

#[test]
fn checkpoint_rejects_other_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny();
    let paths = RunPaths::new(dir.path());
    train(&config, &paths, false).unwrap();
    let mut other = config.clone();
    other.vae.beta *= 2.0;
    assert!(checkpoint::load_for(&paths.checkpoint(2), &other).is_err());
    assert!(checkpoint::load(&paths.checkpoint(2)).is_ok());
    fs::write(paths.checkpoint(2), b"not a checkpoint").unwrap();
    assert!(checkpoint::load(&paths.checkpoint(2)).is_err());
}

#[test]
fn epoch_records_are_finite_and_ordered() {
    let config = tiny();
    let mut t = Trainer::new(config.clone(), family_for(&config).unwrap()).unwrap();
    let mut last = None;
    while !t.is_done() {
        let r = t.run_epoch().unwrap();
        for v in [r.loss_recon, r.loss_kl, r.loss_mmd, r.loss_diff, r.loss_td] {
            assert!(v.is_finite());
        }
        if let Some(prev) = last {
            assert_eq!(r.epoch, prev + 1);
        }
        last = Some(r.epoch);
    }
    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths::new(dir.path());
    train(&config, &paths, false).unwrap();
    let recs: Vec<EpochRecord> = read_jsonl(&paths.metrics()).unwrap();
    assert!(recs.iter().all(|r| r.schema_version == 1));
}
