use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod plot;

#[derive(Parser, Debug)]
#[command(name = "pasf", version, about = "Aligned-representation goal-conditioned RL experiments")]
struct Cli {
    /// Root directory for run outputs; overrides the config's output_dir.
    #[arg(long, global = true, env = "PASF_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one configuration, writing metrics, checkpoints and a summary.
    Train {
        config: PathBuf,
        /// Continue from the latest checkpoint of the run directory.
        #[arg(long)]
        resume: bool,
        /// Run directory name under the output root; defaults to the config file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train every ablation variant over several seeds and compare them.
    Ablate {
        config: PathBuf,
        /// Number of seeds, counting up from the config's seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Comma-separated subset of full,no_D,no_MD,no_AS.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        parallel_seeds: usize,
        #[arg(long)]
        name: Option<String>,
    },
    /// Evaluate a checkpoint on every environment of its family.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Override the number of evaluation episodes per environment.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Verify the generalization inequalities on random finite instances.
    TheoryCheck {
        /// Optional TOML file overriding suite parameters.
        suite: Option<PathBuf>,
        /// Multiply every bound by this factor (values below 1 should fail).
        #[arg(long)]
        fault_scale: Option<f64>,
        /// Where to write the JSON report; defaults to <output root>/theory/report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print every checked inequality, not only the per-check summary.
        #[arg(long)]
        verbose: bool,
    },
    /// Write per-(env, state) latents and their 2-D PCA projection as CSV.
    DumpLatents {
        checkpoint: PathBuf,
        /// Output CSV; defaults to latents.csv next to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only include training environments.
        #[arg(long)]
        train_only: bool,
    },
    /// Emit a matplotlib script that plots a run's metrics.
    PlotScript {
        #[arg(long, default_value = "plot_metrics.py")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ChecksFailed) => ExitCode::from(commands::EXIT_CHECK),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
