use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use pasf_core::experiment::ablation::{self, Variant, VariantRun, ALL_VARIANTS};
use pasf_core::experiment::run::{run_dir, train, RunPaths};
use pasf_core::experiment::{checkpoint, latents};
use pasf_core::theory::{run_suite, SuiteConfig};
use pasf_core::ExperimentConfig;

use crate::{plot, Cli, Command};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_CHECK: u8 = 2;
pub const EXIT_IO: u8 = 3;

pub enum Outcome {
    Ok,
    ChecksFailed,
}

/// I/O and (de)serialization of files map to 3; everything else is a
/// validation failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pasf_core::Error>() {
            return match e {
                pasf_core::Error::Io(_) | pasf_core::Error::Serde(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

pub fn dispatch(cli: Cli) -> Result<Outcome> {
    let root = cli.output_root;
    match cli.command {
        Command::Train { config, resume, name } => cmd_train(&config, root, resume, name),
        Command::Ablate { config, seeds, variants, parallel_seeds, name } => {
            cmd_ablate(&config, root, seeds, variants, parallel_seeds, name)
        }
        Command::Eval { checkpoint, config, episodes } => cmd_eval(&checkpoint, &config, episodes),
        Command::TheoryCheck { suite, fault_scale, out, verbose } => cmd_theory(suite, fault_scale, out, root, verbose),
        Command::DumpLatents { checkpoint, out, train_only } => cmd_dump(&checkpoint, out, train_only),
        Command::PlotScript { out } => {
            fs::write(&out, plot::SCRIPT).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(Outcome::Ok)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn output_root(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_name(config_path: &Path, name: Option<String>) -> String {
    name.unwrap_or_else(|| config_path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned()))
}

fn cmd_train(path: &Path, root: Option<PathBuf>, resume: bool, name: Option<String>) -> Result<Outcome> {
    let config = load_config(path)?;
    let dir = run_dir(&output_root(root, &config), &run_name(path, name));
    let report = train(&config, &RunPaths::new(&dir), resume)?;
    print!("{}", report.summary_table());
    println!("run directory: {}", dir.display());
    Ok(Outcome::Ok)
}

fn cmd_ablate(
    path: &Path,
    root: Option<PathBuf>,
    seeds: u64,
    variants: Option<Vec<String>>,
    workers: usize,
    name: Option<String>,
) -> Result<Outcome> {
    let base = load_config(path)?;
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let variants: Vec<Variant> = match variants {
        Some(names) => names.iter().map(|n| Variant::parse(n)).collect::<pasf_core::Result<_>>()?,
        None => ALL_VARIANTS.to_vec(),
    };
    let dir = run_dir(&output_root(root, &base), &run_name(path, name)).join("ablation");
    let jobs: Vec<(Variant, u64)> =
        variants.iter().flat_map(|&v| (0..seeds).map(move |k| (v, base.seed + k))).collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<VariantRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(variant, seed)) = jobs.get(i) else { break };
        let config = ablation::with_seed(&variant.apply(&base), seed);
        let paths = RunPaths::new(dir.join(variant.name()).join(format!("seed-{seed}")));
        let result = train(&config, &paths, false)
            .map(|report| VariantRun { variant, seed, report })
            .with_context(|| format!("{variant} seed {seed}"));
        if let Ok(run) = &result {
            if let Some(e) = run.report.last_eval() {
                eprintln!(
                    "{variant} seed {seed}: train {:.3} test {:.3} ler {:.3}/{:.3}",
                    e.mean_train_success, e.mean_test_success, e.ler_train, e.ler_test
                );
            }
        }
        results.lock().expect("no worker panicked")[i] = Some(result);
    };
    std::thread::scope(|s| {
        for _ in 1..workers.max(1) {
            s.spawn(work);
        }
        work();
    });
    let runs: Vec<VariantRun> = results
        .into_inner()
        .map_err(|_| anyhow!("a worker panicked"))?
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(anyhow!("run did not start"))))
        .collect::<Result<_>>()?;

    let summary = ablation::summarize(&runs)?;
    let table = ablation::summary_table(&summary);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("summary.txt"), &table)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    print!("{table}");
    println!("ablation directory: {}", dir.display());
    Ok(Outcome::Ok)
}

fn cmd_eval(ckpt: &Path, config_path: &Path, episodes: Option<usize>) -> Result<Outcome> {
    let config = load_config(config_path)?;
    let mut trainer = checkpoint::load_for(ckpt, &config).with_context(|| format!("loading {}", ckpt.display()))?;
    if let Some(n) = episodes {
        if n == 0 {
            bail!("--episodes must be at least 1");
        }
        trainer.config.eval.episodes_per_env = n;
    }
    let record = trainer.evaluate_now(trainer.epoch())?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(Outcome::Ok)
}

fn cmd_theory(
    suite: Option<PathBuf>,
    fault_scale: Option<f64>,
    out: Option<PathBuf>,
    root: Option<PathBuf>,
    verbose: bool,
) -> Result<Outcome> {
    let mut config = match &suite {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SuiteConfig>(&text)
                .map_err(|e| pasf_core::Error::Config(e.to_string()))
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => SuiteConfig::default(),
    };
    if let Some(scale) = fault_scale {
        config.fault_scale = scale;
    }
    let report = run_suite(&config)?;

    if verbose {
        println!("{:<32} {:>5} {:>14} {:>14} {:>14}  holds", "check", "inst", "lhs", "rhs", "slack");
        for r in &report.records {
            println!("{:<32} {:>5} {:>14.6e} {:>14.6e} {:>14.6e}  {}", r.check, r.instance, r.lhs, r.rhs, r.slack, r.holds);
        }
        println!();
    }
    println!("{:<32} {:>6} {:>8} {:>14}", "check", "count", "failed", "min slack");
    for s in report.summary() {
        println!("{:<32} {:>6} {:>8} {:>14.6e}", s.check, s.count, s.failures, s.min_slack);
    }
    for f in report.failures().take(20) {
        println!("FAILED {} #{}: lhs {:.6e} > rhs {:.6e}", f.check, f.instance, f.lhs, f.rhs);
    }

    let out = out.unwrap_or_else(|| root.unwrap_or_else(|| PathBuf::from("runs")).join("theory").join("report.json"));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    println!("report: {}", out.display());
    Ok(if report.all_hold() { Outcome::Ok } else { Outcome::ChecksFailed })
}

fn cmd_dump(ckpt: &Path, out: Option<PathBuf>, train_only: bool) -> Result<Outcome> {
    let trainer = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let family = &trainer.family;
    let envs: Vec<usize> = if train_only { family.train_indices() } else { (0..family.n_envs()).collect() };
    let rows = latents::latent_table(&trainer.vae, family, &envs)?;
    let out = out.unwrap_or_else(|| {
        let dir = ckpt.parent().and_then(Path::parent).unwrap_or(Path::new("."));
        dir.join("latents.csv")
    });
    latents::write_csv(&rows, &out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(Outcome::Ok)
}
