use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::TrainingReport;
use crate::error::{Error, Result};

/// The four ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no_D")]
    NoD,
    #[serde(rename = "no_MD")]
    NoMd,
    #[serde(rename = "no_AS")]
    NoAs,
}

pub const ALL_VARIANTS: [Variant; 4] = [Variant::Full, Variant::NoD, Variant::NoMd, Variant::NoAs];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoD => "no_D",
            Variant::NoMd => "no_MD",
            Variant::NoAs => "no_AS",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?}")))
    }

    /// `base` with this variant's ablation flags; everything else is shared.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.ablation.no_mmd = matches!(self, Variant::NoMd);
        c.ablation.no_diff = matches!(self, Variant::NoD | Variant::NoMd);
        c.ablation.no_aligned_sampling = matches!(self, Variant::NoAs);
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `base` with its seed replaced. The family seed follows the run seed
/// unless it was pinned.
pub fn with_seed(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = base.clone();
    c.seed = seed;
    c
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub report: TrainingReport,
}

/// Final-epoch medians of one variant across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub train_success: f64,
    pub test_success: f64,
    pub ler_train: f64,
    pub ler_test: f64,
    /// Largest MMD loss seen in any epoch of any seed.
    pub max_mmd_loss: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Summarizes finished runs per variant, in `ALL_VARIANTS` order.
pub fn summarize(runs: &[VariantRun]) -> Result<Vec<VariantSummary>> {
    let mut out = Vec::new();
    for variant in ALL_VARIANTS {
        let mine: Vec<&VariantRun> = runs.iter().filter(|r| r.variant == variant).collect();
        if mine.is_empty() {
            continue;
        }
        let mut cols: [Vec<f64>; 4] = Default::default();
        let mut max_mmd = 0.0f64;
        for r in &mine {
            let eval = r.report.last_eval().ok_or(Error::Empty("evaluation records"))?;
            cols[0].push(eval.mean_train_success);
            cols[1].push(eval.mean_test_success);
            cols[2].push(eval.ler_train);
            cols[3].push(eval.ler_test);
            for rec in &r.report.records {
                max_mmd = max_mmd.max(rec.loss_mmd);
            }
        }
        out.push(VariantSummary {
            variant,
            seeds: mine.len(),
            train_success: median(&cols[0]),
            test_success: median(&cols[1]),
            ler_train: median(&cols[2]),
            ler_test: median(&cols[3]),
            max_mmd_loss: max_mmd,
        });
    }
    Ok(out)
}

pub fn summary_table(rows: &[VariantSummary]) -> String {
    let mut s = format!(
        "{:<8} {:>5} {:>11} {:>11} {:>10} {:>10} {:>10}\n",
        "variant", "seeds", "train_succ", "test_succ", "ler_train", "ler_test", "max_mmd"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:>5} {:>11.3} {:>11.3} {:>10.4} {:>10.4} {:>10.2e}\n",
            r.variant.name(),
            r.seeds,
            r.train_success,
            r.test_success,
            r.ler_train,
            r.ler_test,
            r.max_mmd_loss
        ));
    }
    s
}
