use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::RelabelStrategy;
use crate::alignment::InitialSharing;
use crate::error::{Error, Result};
use crate::gbmdp::{FamilyConfig, TestNuisance};
use crate::gbmdp::fnv1a;
use crate::nn::Activation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seed for family generation; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_seed: Option<u64>,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write a checkpoint every this many epochs (0 disables).
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
    pub family: FamilyConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub vae: VaeConfig,
    #[serde(default)]
    pub aligned: AlignedConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub q_hidden: Vec<usize>,
    pub batch_size: usize,
    pub updates_per_epoch: usize,
    pub target_sync: u64,
    /// Environment steps per epoch, shared by exploration and aligned
    /// sampling.
    pub steps_per_epoch: usize,
    pub horizon: usize,
    pub relabels_per_step: usize,
    pub relabel_strategy: RelabelStrategy,
    pub skew_alpha: f64,
    /// Cap on distinct candidates per skew table; larger buffers are
    /// subsampled.
    pub skew_candidates: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which ε anneals.
    pub eps_anneal_fraction: f64,
    pub goal_replace_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub beta: f64,
    pub alpha_mmd: f64,
    pub alpha_diff: f64,
    pub psi_dim: usize,
    pub psi_gamma: f64,
    pub replay_batch: usize,
    pub aligned_batch: usize,
    pub steps_per_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSource {
    Policy,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignedConfig {
    /// Share of environment steps spent on aligned sampling.
    pub fraction: f64,
    pub path_length: usize,
    pub action_source: ActionSource,
    pub initial_sharing: InitialSharing,
    pub capacity: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub no_mmd: bool,
    pub no_diff: bool,
    pub no_aligned_sampling: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes_per_env: usize,
    /// Defaults to the agent horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    pub every: usize,
}

mod defaults {
    pub fn epochs() -> usize {
        200
    }
    pub fn checkpoint_every() -> usize {
        10
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.9,
            lr: 1e-3,
            q_hidden: vec![128, 128],
            batch_size: 128,
            updates_per_epoch: 1500,
            target_sync: 100,
            steps_per_epoch: 900,
            horizon: 20,
            relabels_per_step: 3,
            relabel_strategy: RelabelStrategy::Future,
            skew_alpha: -0.1,
            skew_candidates: 1024,
            replay_capacity: 50_000,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_fraction: 0.2,
            goal_replace_prob: 0.5,
        }
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 8,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            lr: 1e-3,
            beta: 20.0,
            alpha_mmd: 1000.0,
            alpha_diff: 0.1,
            psi_dim: 1024,
            psi_gamma: 1.0,
            replay_batch: 32,
            aligned_batch: 32,
            steps_per_epoch: 100,
        }
    }
}

impl Default for AlignedConfig {
    fn default() -> Self {
        AlignedConfig {
            fraction: 1.0 / 6.0,
            path_length: 50,
            action_source: ActionSource::Policy,
            initial_sharing: InitialSharing::Auto,
            capacity: 1000,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes_per_env: 50, horizon: None, every: 1 }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and > 0 (got {v})")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and >= 0 (got {v})")))
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1] (got {v})")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 1")))
    }
}

impl ExperimentConfig {
    /// A configuration with every optional section at its default.
    pub fn new(seed: u64, family: FamilyConfig) -> Self {
        ExperimentConfig {
            seed,
            family_seed: None,
            epochs: defaults::epochs(),
            output_dir: None,
            checkpoint_every: defaults::checkpoint_every(),
            family,
            agent: AgentConfig::default(),
            vae: VaeConfig::default(),
            aligned: AlignedConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// 5×5 grid with three training and two test environments whose
    /// nuisance parameters are mixtures of the training ones, with loss
    /// weights balanced for 27-dimensional observations. One seed trains in
    /// under a minute on a single core.
    pub fn grid_benchmark(seed: u64) -> Self {
        let mut family = FamilyConfig::grid(5, 5, 3, 2);
        family.offset_scale = 0.5;
        family.mix_scale = 0.05;
        family.test_nuisance = TestNuisance::Interpolated;
        let mut c = Self::new(seed, family);
        c.epochs = 50;
        c.agent.updates_per_epoch = 600;
        c.agent.batch_size = 64;
        c.agent.q_hidden = vec![64, 64];
        c.vae.steps_per_epoch = 200;
        c.vae.lr = 3e-3;
        c.vae.beta = 0.003;
        c.vae.alpha_mmd = 7.0;
        c.vae.alpha_diff = 3e-4;
        c.vae.psi_dim = 256;
        c.vae.psi_gamma = 5.0;
        c.eval.every = 25;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn family_seed(&self) -> u64 {
        self.family_seed.unwrap_or(self.seed)
    }

    /// Digest of the serialized configuration, ignoring the output location.
    pub fn hash(&self) -> u64 {
        let mut c = self.clone();
        c.output_dir = None;
        fnv1a(c.to_toml_string().unwrap_or_default().as_bytes())
    }

    pub fn eval_horizon(&self) -> usize {
        self.eval.horizon.unwrap_or(self.agent.horizon)
    }

    /// Share of steps actually spent on aligned sampling.
    pub fn aligned_fraction(&self) -> f64 {
        if self.ablation.no_aligned_sampling {
            0.0
        } else {
            self.aligned.fraction
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        at_least_one("epochs", self.epochs)?;
        let a = &self.agent;
        if !(a.gamma > 0.0 && a.gamma < 1.0) {
            return Err(Error::Config(format!("agent.gamma must lie in (0, 1) (got {})", a.gamma)));
        }
        positive("agent.lr", a.lr)?;
        if a.q_hidden.contains(&0) {
            return Err(Error::Config("agent.q_hidden widths must be >= 1".into()));
        }
        at_least_one("agent.batch_size", a.batch_size)?;
        at_least_one("agent.target_sync", a.target_sync as usize)?;
        at_least_one("agent.steps_per_epoch", a.steps_per_epoch)?;
        at_least_one("agent.horizon", a.horizon)?;
        if !(a.skew_alpha.is_finite() && a.skew_alpha <= 0.0) {
            return Err(Error::Config(format!("agent.skew_alpha must be <= 0 (got {})", a.skew_alpha)));
        }
        at_least_one("agent.skew_candidates", a.skew_candidates)?;
        at_least_one("agent.replay_capacity", a.replay_capacity)?;
        unit("agent.eps_start", a.eps_start)?;
        unit("agent.eps_end", a.eps_end)?;
        unit("agent.eps_anneal_fraction", a.eps_anneal_fraction)?;
        unit("agent.goal_replace_prob", a.goal_replace_prob)?;

        let v = &self.vae;
        at_least_one("vae.latent_dim", v.latent_dim)?;
        if v.hidden.contains(&0) {
            return Err(Error::Config("vae.hidden widths must be >= 1".into()));
        }
        positive("vae.lr", v.lr)?;
        non_negative("vae.beta", v.beta)?;
        non_negative("vae.alpha_mmd", v.alpha_mmd)?;
        non_negative("vae.alpha_diff", v.alpha_diff)?;
        at_least_one("vae.psi_dim", v.psi_dim)?;
        positive("vae.psi_gamma", v.psi_gamma)?;
        at_least_one("vae.replay_batch", v.replay_batch)?;
        at_least_one("vae.aligned_batch", v.aligned_batch)?;

        let al = &self.aligned;
        if !(0.0..1.0).contains(&al.fraction) {
            return Err(Error::Config(format!("aligned.fraction must lie in [0, 1) (got {})", al.fraction)));
        }
        at_least_one("aligned.path_length", al.path_length)?;
        at_least_one("aligned.capacity", al.capacity)?;
        if self.aligned_fraction() > 0.0 && self.family.n_train < 2 {
            return Err(Error::Config("aligned sampling needs family.n_train >= 2".into()));
        }
        if !self.ablation.no_mmd && v.alpha_mmd > 0.0 && self.family.n_train < 2 {
            return Err(Error::Config("the MMD loss needs family.n_train >= 2".into()));
        }
        at_least_one("eval.episodes_per_env", self.eval.episodes_per_env)?;
        at_least_one("eval.every", self.eval.every)?;
        if let Some(h) = self.eval.horizon {
            at_least_one("eval.horizon", h)?;
        }
        Ok(())
    }
}
