//! Goal-conditioned block MDP families.
//!
//! All environments of a family share states, actions and dynamics. Each one
//! renders observations as `[A_e · onehot(s) + c_e ; D · b]`, where `b` is the
//! environment's nuisance factor. Training environments keep `b` fixed;
//! test environments let it drift in a bounded box.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FAMILY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpec {
    Grid { width: usize, height: usize },
    Chain { length: usize },
}

impl StateSpec {
    pub fn n_states(&self) -> usize {
        match *self {
            StateSpec::Grid { width, height } => width * height,
            StateSpec::Chain { length } => length,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            StateSpec::Grid { .. } => GRID_ACTIONS.len(),
            StateSpec::Chain { .. } => CHAIN_ACTIONS.len(),
        }
    }

    pub fn action_names(&self) -> &'static [&'static str] {
        match self {
            StateSpec::Grid { .. } => &GRID_ACTIONS,
            StateSpec::Chain { .. } => &CHAIN_ACTIONS,
        }
    }

    /// Grid states are numbered row-major: `s = y * width + x`.
    pub fn grid_index(&self, x: usize, y: usize) -> Option<usize> {
        match *self {
            StateSpec::Grid { width, height } if x < width && y < height => Some(y * width + x),
            _ => None,
        }
    }

    /// Coordinates of `s` in unit spacing. Injective over states.
    pub fn embedding(&self, s: usize) -> Vec<f64> {
        match *self {
            StateSpec::Grid { width, .. } => vec![(s % width) as f64, (s / width) as f64],
            StateSpec::Chain { .. } => vec![s as f64],
        }
    }

    /// Deterministic successor; moves into a wall leave the state unchanged.
    pub fn successor(&self, s: usize, a: usize) -> usize {
        match *self {
            StateSpec::Grid { width, height } => {
                let (x, y) = (s % width, s / width);
                let (nx, ny) = match a {
                    0 => (x, (y + 1).min(height - 1)),
                    1 => (x, y.saturating_sub(1)),
                    2 => (x.saturating_sub(1), y),
                    3 => ((x + 1).min(width - 1), y),
                    _ => (x, y),
                };
                ny * width + nx
            }
            StateSpec::Chain { length } => match a {
                0 => s.saturating_sub(1),
                1 => (s + 1).min(length - 1),
                _ => s,
            },
        }
    }
}

const GRID_ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];
const CHAIN_ACTIONS: [&str; 3] = ["left", "right", "stay"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialDist {
    Point { state: usize },
    Uniform { states: Vec<usize> },
    /// Uniform over every state.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmdpSpec {
    pub states: StateSpec,
    /// `next[s][a]`: successor without slipping.
    pub next: Vec<Vec<usize>>,
    /// With this probability the executed action is a uniformly random
    /// different action.
    pub slip: f64,
    pub initial: InitialDist,
    pub goals: Vec<usize>,
    pub gamma: f64,
}

impl GbmdpSpec {
    pub fn new(states: StateSpec, slip: f64, initial: InitialDist, gamma: f64) -> Result<Self> {
        let n = states.n_states();
        if n == 0 {
            return Err(Error::Config("state space is empty".into()));
        }
        if !(0.0..=0.05).contains(&slip) {
            return Err(Error::Config(format!("slip {slip} outside [0, 0.05]")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma {gamma} outside (0, 1)")));
        }
        match &initial {
            InitialDist::Point { state } if *state >= n => {
                return Err(Error::Config(format!("start state {state} out of range")))
            }
            InitialDist::Uniform { states: set } if set.is_empty() || set.iter().any(|&s| s >= n) => {
                return Err(Error::Config("start set empty or out of range".into()))
            }
            _ => {}
        }
        let next = (0..n)
            .map(|s| (0..states.n_actions()).map(|a| states.successor(s, a)).collect())
            .collect();
        Ok(GbmdpSpec { states, next, slip, initial, goals: (0..n).collect(), gamma })
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    /// Dense next-state distribution for `(s, a)`.
    pub fn transition_probs(&self, s: usize, a: usize) -> Vec<f64> {
        let na = self.n_actions();
        let mut p = vec![0.0; self.n_states()];
        p[self.next[s][a]] += 1.0 - self.slip;
        if self.slip > 0.0 && na > 1 {
            let share = self.slip / (na - 1) as f64;
            for other in (0..na).filter(|&o| o != a) {
                p[self.next[s][other]] += share;
            }
        } else {
            p[self.next[s][a]] += self.slip;
        }
        p
    }

    pub fn initial_probs(&self) -> Vec<f64> {
        let n = self.n_states();
        let mut p = vec![0.0; n];
        match &self.initial {
            InitialDist::Point { state } => p[*state] = 1.0,
            InitialDist::Uniform { states } => {
                for &s in states {
                    p[s] += 1.0 / states.len() as f64;
                }
            }
            InitialDist::All => p.iter_mut().for_each(|v| *v = 1.0 / n as f64),
        }
        p
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.initial {
            InitialDist::Point { state } => *state,
            InitialDist::Uniform { states } => states[rng.random_range(0..states.len())],
            InitialDist::All => rng.random_range(0..self.n_states()),
        }
    }

    /// Samples the successor; the flag reports whether the action slipped.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, bool) {
        let na = self.n_actions();
        if self.slip > 0.0 && na > 1 && rng.random::<f64>() < self.slip {
            let mut other = rng.random_range(0..na - 1);
            if other >= a {
                other += 1;
            }
            (self.next[s][other], true)
        } else {
            (self.next[s][a], false)
        }
    }

    pub fn oracle_distance(&self, s: usize, g: usize) -> f64 {
        let (a, b) = (self.states.embedding(s), self.states.embedding(g));
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FactorMode {
    Static,
    /// Gaussian random walk with the given step scale, clamped to the box.
    Drifting { step: f64 },
}

/// How the state-block maps of test environments are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestNuisance {
    /// Independently of the training environments.
    #[default]
    Independent,
    /// As random convex combinations of the training environments' mixing
    /// matrices and offsets.
    Interpolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvInstance {
    pub index: usize,
    pub mode: FactorMode,
    /// `|S| x |S|` map applied to the state one-hot.
    pub mix: Array2<f64>,
    pub offset: Array1<f64>,
    /// `distractor_dim x factor_dim` emission of the factor.
    pub distractor: Array2<f64>,
    /// Factor value of a static environment. Drifting environments draw
    /// their reset value uniformly from the box instead.
    pub factor0: Array1<f64>,
    /// Factors are kept in `[-factor_bound, factor_bound]^k`.
    pub factor_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenEnvState {
    pub s: usize,
    pub b: Array1<f64>,
}

impl EnvInstance {
    pub fn n_states(&self) -> usize {
        self.offset.len()
    }

    pub fn factor_dim(&self) -> usize {
        self.factor0.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.n_states() + self.distractor.nrows()
    }

    pub fn state_block(&self, s: usize) -> Array1<f64> {
        &self.mix.column(s) + &self.offset
    }

    pub fn observe(&self, s: usize, b: &Array1<f64>) -> Array1<f64> {
        let mut x = Array1::zeros(self.obs_dim());
        let n = self.n_states();
        x.slice_mut(ndarray::s![..n]).assign(&self.state_block(s));
        if self.distractor.nrows() > 0 {
            x.slice_mut(ndarray::s![n..]).assign(&self.distractor.dot(b));
        }
        x
    }

    pub fn initial_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        match self.mode {
            FactorMode::Static => self.factor0.clone(),
            FactorMode::Drifting { .. } => {
                let bound = self.factor_bound;
                self.factor0.mapv(|_| rng.random_range(-bound..=bound))
            }
        }
    }

    pub fn step_factor<R: Rng + ?Sized>(&self, b: &Array1<f64>, rng: &mut R) -> Array1<f64> {
        match self.mode {
            FactorMode::Static => b.clone(),
            FactorMode::Drifting { step } => b.mapv(|v| {
                let z: f64 = StandardNormal.sample(rng);
                (v + step * z).clamp(-self.factor_bound, self.factor_bound)
            }),
        }
    }

    /// Nearest state by Euclidean distance on the state block.
    pub fn decode_state(&self, x: &[f64]) -> usize {
        let n = self.n_states();
        (0..n)
            .map(|s| {
                let blk = self.state_block(s);
                let d: f64 = blk.iter().zip(&x[..n]).map(|(a, b)| (a - b).powi(2)).sum();
                (s, d)
            })
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
            .0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub states: StateSpec,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub factor_dim: usize,
    /// Defaults to `|S| + factor_dim`.
    #[serde(default)]
    pub obs_dim: Option<usize>,
    #[serde(default)]
    pub slip: f64,
    #[serde(default = "default_initial")]
    pub initial: InitialDist,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_train_mode")]
    pub train_factor_mode: FactorMode,
    #[serde(default = "default_test_mode")]
    pub test_factor_mode: FactorMode,
    /// Offsets `c_e` are drawn from a subspace of this rank shared by all
    /// environments.
    #[serde(default = "default_offset_rank")]
    pub offset_rank: usize,
    #[serde(default = "default_one")]
    pub offset_scale: f64,
    /// Entry scale of the perturbation `A_e = I + mix_scale * G_e`.
    #[serde(default = "default_mix_scale")]
    pub mix_scale: f64,
    #[serde(default = "default_one")]
    pub distractor_scale: f64,
    #[serde(default = "default_one")]
    pub factor_bound: f64,
    /// Families whose cross-state separation falls below this are redrawn.
    #[serde(default = "default_min_margin")]
    pub min_margin: f64,
    #[serde(default)]
    pub test_nuisance: TestNuisance,
}

fn default_initial() -> InitialDist {
    InitialDist::All
}
fn default_gamma() -> f64 {
    0.9
}
fn default_train_mode() -> FactorMode {
    FactorMode::Static
}
fn default_test_mode() -> FactorMode {
    FactorMode::Drifting { step: 0.1 }
}
fn default_offset_rank() -> usize {
    2
}
fn default_one() -> f64 {
    1.0
}
fn default_mix_scale() -> f64 {
    0.05
}
fn default_min_margin() -> f64 {
    0.25
}

impl FamilyConfig {
    pub fn grid(width: usize, height: usize, n_train: usize, n_test: usize) -> Self {
        FamilyConfig {
            states: StateSpec::Grid { width, height },
            n_train,
            n_test,
            factor_dim: 2,
            obs_dim: None,
            slip: 0.0,
            initial: default_initial(),
            gamma: default_gamma(),
            train_factor_mode: default_train_mode(),
            test_factor_mode: default_test_mode(),
            offset_rank: default_offset_rank(),
            offset_scale: 1.0,
            mix_scale: default_mix_scale(),
            distractor_scale: 1.0,
            factor_bound: 1.0,
            min_margin: default_min_margin(),
            test_nuisance: TestNuisance::Independent,
        }
    }

    pub fn chain(length: usize, n_train: usize, n_test: usize) -> Self {
        FamilyConfig { states: StateSpec::Chain { length }, ..Self::grid(1, 1, n_train, n_test) }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.n_states();
        if n == 0 {
            return Err(Error::Config("family.states: state space is empty".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("family.n_train must be at least 1".into()));
        }
        if let Some(d) = self.obs_dim {
            if d < n + self.factor_dim {
                return Err(Error::Config(format!(
                    "family.obs_dim {d} is smaller than |S| + factor_dim = {}",
                    n + self.factor_dim
                )));
            }
        }
        for (name, v) in [
            ("offset_scale", self.offset_scale),
            ("mix_scale", self.mix_scale),
            ("distractor_scale", self.distractor_scale),
            ("min_margin", self.min_margin),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("family.{name} must be finite and >= 0")));
            }
        }
        if !(self.factor_bound.is_finite() && self.factor_bound > 0.0) {
            return Err(Error::Config("family.factor_bound must be > 0".into()));
        }
        for mode in [self.train_factor_mode, self.test_factor_mode] {
            if let FactorMode::Drifting { step } = mode {
                if !(step.is_finite() && step >= 0.0) {
                    return Err(Error::Config("drift step must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim.unwrap_or(self.states.n_states() + self.factor_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmdpFamily {
    pub spec: GbmdpSpec,
    pub train: Vec<EnvInstance>,
    pub test: Vec<EnvInstance>,
    pub obs_dim: usize,
    /// Smallest max-norm distance between state blocks of different states
    /// over all environment pairs.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisjointnessReport {
    pub holds: bool,
    pub min_separation: f64,
    pub pairs_checked: usize,
}

const MAX_REDRAWS: usize = 64;

impl GbmdpFamily {
    /// Generates a family deterministically from `seed`.
    pub fn generate(config: &FamilyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = GbmdpSpec::new(config.states.clone(), config.slip, config.initial.clone(), config.gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_REDRAWS {
            let family = Self::draw(config, spec.clone(), &mut rng)?;
            if family.margin >= config.min_margin || family.n_envs() * spec.n_states() < 2 {
                return Ok(family);
            }
        }
        Err(Error::Config(format!(
            "could not draw a family with separation >= {} in {MAX_REDRAWS} attempts",
            config.min_margin
        )))
    }

    fn draw(config: &FamilyConfig, spec: GbmdpSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = spec.n_states();
        let k = config.factor_dim;
        let dd = config.obs_dim() - n;
        let rank = config.offset_rank.min(n);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let basis = Array2::from_shape_fn((n, rank), |_| normal(rng) / (n as f64).sqrt());
        let distractor = Array2::from_shape_fn((dd, k), |_| {
            config.distractor_scale * normal(rng) / (k.max(1) as f64).sqrt()
        });
        let box_dist = Uniform::new_inclusive(-config.factor_bound, config.factor_bound)
            .map_err(|e| Error::Config(e.to_string()))?;
        let total = config.n_train + config.n_test;
        let mut envs = Vec::with_capacity(total);
        for e in 0..total {
            let coeff = Array1::from_shape_fn(rank, |_| config.offset_scale * normal(rng) * (n as f64).sqrt() / (rank.max(1) as f64).sqrt());
            let offset = if rank > 0 { basis.dot(&coeff) } else { Array1::zeros(n) };
            let mix = Array2::from_shape_fn((n, n), |(i, j)| {
                let id = if i == j { 1.0 } else { 0.0 };
                id + config.mix_scale * normal(rng)
            });
            let factor0 = Array1::from_shape_fn(k, |_| box_dist.sample(rng));
            let mode = if e < config.n_train { config.train_factor_mode } else { config.test_factor_mode };
            envs.push(EnvInstance {
                index: e,
                mode,
                mix,
                offset,
                distractor: distractor.clone(),
                factor0,
                factor_bound: config.factor_bound,
            });
        }
        let mut test = envs.split_off(config.n_train);
        if config.test_nuisance == TestNuisance::Interpolated && !envs.is_empty() {
            for t in &mut test {
                let w: Vec<f64> = (0..envs.len()).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = w.iter().sum();
                t.mix.fill(0.0);
                t.offset.fill(0.0);
                for (src, wi) in envs.iter().zip(&w) {
                    t.mix.scaled_add(wi / total, &src.mix);
                    t.offset.scaled_add(wi / total, &src.offset);
                }
            }
        }
        Self::from_parts(spec, envs, test)
    }

    /// Assembles a family from explicit parts, checking shapes and computing
    /// the separation margin. Env indices must be `0..N+M` in order.
    pub fn from_parts(spec: GbmdpSpec, train: Vec<EnvInstance>, test: Vec<EnvInstance>) -> Result<Self> {
        let n = spec.n_states();
        let all: Vec<&EnvInstance> = train.iter().chain(&test).collect();
        let obs_dim = all.first().map(|e| e.obs_dim()).ok_or(Error::Empty("environments"))?;
        for (i, env) in all.iter().enumerate() {
            if env.index != i {
                return Err(Error::Config(format!("env at position {i} has index {}", env.index)));
            }
            if env.mix.dim() != (n, n) || env.offset.len() != n {
                return Err(Error::Shape(format!("env {i} state block does not match |S| = {n}")));
            }
            if env.obs_dim() != obs_dim || env.distractor.ncols() != env.factor_dim() {
                return Err(Error::Shape(format!("env {i} observation layout differs")));
            }
        }
        let mut family = GbmdpFamily { spec, train, test, obs_dim, margin: 0.0 };
        family.margin = family.state_block_margin();
        Ok(family)
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_envs(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    pub fn env(&self, e: usize) -> Result<&EnvInstance> {
        self.train.iter().chain(&self.test).nth(e).ok_or(Error::UnknownEnv(e))
    }

    pub fn envs(&self) -> impl Iterator<Item = &EnvInstance> {
        self.train.iter().chain(&self.test)
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.train.len()).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (self.train.len()..self.n_envs()).collect()
    }

    pub fn observe(&self, e: usize, h: &HiddenEnvState) -> Result<Array1<f64>> {
        Ok(self.env(e)?.observe(h.s, &h.b))
    }

    pub fn reset<R: Rng + ?Sized>(&self, e: usize, rng: &mut R) -> Result<(Array1<f64>, HiddenEnvState)> {
        let s = self.spec.sample_initial(rng);
        self.reset_to(e, s, rng)
    }

    /// Reset with a given initial state (used for aligned rollouts that share
    /// one start realization).
    pub fn reset_to<R: Rng + ?Sized>(
        &self,
        e: usize,
        s: usize,
        rng: &mut R,
    ) -> Result<(Array1<f64>, HiddenEnvState)> {
        let env = self.env(e)?;
        if s >= self.n_states() {
            return Err(Error::Invalid(format!("state {s} out of range")));
        }
        let h = HiddenEnvState { s, b: env.initial_factor(rng) };
        Ok((env.observe(h.s, &h.b), h))
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        e: usize,
        h: &HiddenEnvState,
        a: usize,
        rng: &mut R,
    ) -> Result<(Array1<f64>, HiddenEnvState)> {
        self.step_with_info(e, h, a, rng).map(|(x, h, _)| (x, h))
    }

    pub fn step_with_info<R: Rng + ?Sized>(
        &self,
        e: usize,
        h: &HiddenEnvState,
        a: usize,
        rng: &mut R,
    ) -> Result<(Array1<f64>, HiddenEnvState, bool)> {
        let env = self.env(e)?;
        if a >= self.n_actions() {
            return Err(Error::Invalid(format!("action {a} out of range")));
        }
        let (s, slipped) = self.spec.sample_next(h.s, a, rng);
        let b = env.step_factor(&h.b, rng);
        let x = env.observe(s, &b);
        Ok((x, HiddenEnvState { s, b }, slipped))
    }

    pub fn oracle_distance(&self, s: usize, g: usize) -> f64 {
        self.spec.oracle_distance(s, g)
    }

    fn state_block_margin(&self) -> f64 {
        let blocks: Vec<(usize, Array1<f64>)> = self
            .envs()
            .flat_map(|env| (0..self.n_states()).map(move |s| (s, env.state_block(s))))
            .collect();
        min_cross_state_separation(&blocks).0
    }

    /// Samples `n_samples` factor values per (env, state) and checks that no
    /// two observations of different states have state blocks within `tol`
    /// of each other in max-norm.
    pub fn verify_disjointness<R: Rng + ?Sized>(&self, n_samples: usize, tol: f64, rng: &mut R) -> DisjointnessReport {
        let n = self.n_states();
        let mut blocks = Vec::new();
        for env in self.envs() {
            for s in 0..n {
                for _ in 0..n_samples.max(1) {
                    let x = env.observe(s, &env.initial_factor(rng));
                    blocks.push((s, x.slice(ndarray::s![..n]).to_owned()));
                }
            }
        }
        let (min_separation, pairs_checked) = min_cross_state_separation(&blocks);
        DisjointnessReport { holds: min_separation > tol, min_separation, pairs_checked }
    }

    /// Stable 64-bit digest of the family parameters.
    pub fn fingerprint(&self) -> u64 {
        let bytes = bincode::serialize(self).expect("family serializes");
        fnv1a(&bytes)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Versioned<'a> {
            version: u32,
            family: &'a GbmdpFamily,
        }
        Ok(serde_json::to_string_pretty(&Versioned { version: FAMILY_FORMAT_VERSION, family: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Versioned {
            version: u32,
            family: GbmdpFamily,
        }
        let v: Versioned = serde_json::from_str(text)?;
        if v.version != FAMILY_FORMAT_VERSION {
            return Err(Error::Mismatch(format!("family format version {}", v.version)));
        }
        Ok(v.family)
    }
}

fn min_cross_state_separation(blocks: &[(usize, Array1<f64>)]) -> (f64, usize) {
    let mut min = f64::INFINITY;
    let mut count = 0;
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if blocks[i].0 == blocks[j].0 {
                continue;
            }
            count += 1;
            let d = blocks[i].1.iter().zip(&blocks[j].1).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            min = min.min(d);
        }
    }
    (min, count)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
