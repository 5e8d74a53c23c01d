use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hindsight::relabel_indices;
use super::qnet::{greedy, latent_reward, QBatch, QNetwork};
use super::replay::{ObservationStore, ReplayBuffer, Transition};
use super::skew::{skewed_weights_counted, GaussianKde, SkewTable};
use crate::alignment::{collect_aligned, AlignedBuffer};
use crate::error::{Error, Result};
use crate::experiment::config::{ActionSource, ExperimentConfig};
use crate::experiment::report::{EpochRecord, EvalRecord, TrainingReport, SCHEMA_VERSION};
use crate::gbmdp::GbmdpFamily;
use crate::losses::RandomExpansion;
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::vae::{latent_error_rate, measure_alignment, vae_loss, Encoder, VaeBatch, VaeLossWeights, VaeParams};

/// Something that picks actions for a batch of observations and goal
/// observations.
pub trait GoalPolicy {
    fn actions(&self, obs: &Array2<f64>, goals: &Array2<f64>) -> Result<Vec<usize>>;
}

/// Greedy policy on the latent Q-values.
pub struct LatentGreedy<'a> {
    pub q: &'a QNetwork,
    pub vae: &'a VaeParams,
}

impl GoalPolicy for LatentGreedy<'_> {
    fn actions(&self, obs: &Array2<f64>, goals: &Array2<f64>) -> Result<Vec<usize>> {
        let q = self.q.q_values(&self.vae.embed(obs)?, &self.vae.embed(goals)?)?;
        Ok(q.rows().into_iter().map(|r| greedy(r.as_slice().expect("contiguous"))).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_distance: f64,
}

/// Runs `episodes` greedy episodes in env `e` with goals drawn uniformly
/// from the goal space and rendered by the same env. An episode succeeds
/// when its final state is the goal.
pub fn evaluate<P: GoalPolicy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    family: &GbmdpFamily,
    e: usize,
    episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let env = family.env(e)?;
    let goals_space = &family.spec.goals;
    let mut goals = Vec::with_capacity(episodes);
    let mut goal_obs = Array2::zeros((episodes, family.obs_dim));
    let mut hidden = Vec::with_capacity(episodes);
    let mut obs = Array2::zeros((episodes, family.obs_dim));
    for i in 0..episodes {
        let g = goals_space[rng.random_range(0..goals_space.len())];
        goal_obs.row_mut(i).assign(&env.observe(g, &env.initial_factor(rng)));
        let (x, h) = family.reset(e, rng)?;
        obs.row_mut(i).assign(&x);
        goals.push(g);
        hidden.push(h);
    }
    for _ in 0..horizon {
        let actions = policy.actions(&obs, &goal_obs)?;
        for i in 0..episodes {
            let (x, h) = family.step(e, &hidden[i], actions[i], rng)?;
            obs.row_mut(i).assign(&x);
            hidden[i] = h;
        }
    }
    let mut hits = 0;
    let mut dist = 0.0;
    for (h, &g) in hidden.iter().zip(&goals) {
        let d = family.oracle_distance(h.s, g);
        if d == 0.0 {
            hits += 1;
        }
        dist += d;
    }
    Ok(EvalResult { success_rate: hits as f64 / episodes as f64, mean_distance: dist / episodes as f64 })
}

/// One exploration episode: observation ids `x_0..x_H`, actions `a_0..a_{H-1}`.
#[derive(Clone, Debug)]
struct Episode {
    env: usize,
    obs: Vec<u32>,
    actions: Vec<usize>,
}

/// Complete training state. Serializing it and deserializing later resumes
/// the run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    #[serde(with = "as_json")]
    pub config: ExperimentConfig,
    #[serde(with = "as_json")]
    pub family: GbmdpFamily,
    rng: ChaCha8Rng,
    pub vae: VaeParams,
    enc_adam: AdamState,
    dec_adam: AdamState,
    pub expansion: RandomExpansion,
    pub q: QNetwork,
    store: ObservationStore,
    replay: Vec<ReplayBuffer>,
    aligned: AlignedBuffer,
    skew: Vec<Option<SkewTable>>,
    epoch: usize,
    env_steps: u64,
    aligned_credit: f64,
    goal_draws: u64,
    goal_replacements: u64,
    /// Encoder means for every stored observation; rebuilt after each VAE
    /// phase.
    #[serde(skip)]
    latents: Option<Array2<f64>>,
}

/// Stores a value as an embedded JSON string, so types using internally
/// tagged enums survive non-self-describing formats such as bincode.
mod as_json {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        let text = serde_json::to_string(value).map_err(S::Error::custom)?;
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let text = String::deserialize(d)?;
        serde_json::from_str(&text).map_err(D::Error::custom)
    }
}

/// Mean of each loss component over one phase.
#[derive(Default)]
struct LossTotals {
    recon: f64,
    kl: f64,
    mmd: f64,
    diff: f64,
    total: f64,
    steps: usize,
}

impl Trainer {
    pub fn new(config: ExperimentConfig, family: GbmdpFamily) -> Result<Self> {
        config.validate()?;
        if family.n_train() != config.family.n_train {
            return Err(Error::Mismatch("family does not match the configuration".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let v = &config.vae;
        let n = family.n_train();
        let vae = VaeParams::new(family.obs_dim, v.latent_dim, n, &v.hidden, v.activation, &mut rng)?;
        let expansion = RandomExpansion::new(v.latent_dim, v.psi_dim, v.psi_gamma, &mut rng)?;
        let a = &config.agent;
        let q = QNetwork::new(
            v.latent_dim,
            &a.q_hidden,
            family.n_actions(),
            AdamConfig::with_lr(a.lr),
            a.target_sync,
            &mut rng,
        )?;
        let replay = (0..n).map(|_| ReplayBuffer::new(a.replay_capacity)).collect::<Result<_>>()?;
        Ok(Trainer {
            enc_adam: AdamState::new(&vae.encoder, AdamConfig::with_lr(v.lr)),
            dec_adam: AdamState::new(&vae.decoder, AdamConfig::with_lr(v.lr)),
            aligned: AlignedBuffer::new(config.aligned.capacity)?,
            skew: vec![None; n],
            config,
            family,
            rng,
            vae,
            expansion,
            q,
            store: ObservationStore::default(),
            replay,
            epoch: 0,
            env_steps: 0,
            aligned_credit: 0.0,
            goal_draws: 0,
            goal_replacements: 0,
            latents: None,
        })
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn replay_len(&self, e: usize) -> usize {
        self.replay.get(e).map_or(0, |b| b.len())
    }

    /// Fraction of Q-batch goals replaced by a skewed replay sample, over
    /// draws where a skew table existed.
    pub fn goal_replacement_rate(&self) -> Option<f64> {
        (self.goal_draws > 0).then(|| self.goal_replacements as f64 / self.goal_draws as f64)
    }

    pub fn aligned_buffer(&self) -> &AlignedBuffer {
        &self.aligned
    }

    pub fn epsilon(&self) -> f64 {
        let a = &self.config.agent;
        let total = (self.config.epochs * a.steps_per_epoch) as f64 * a.eps_anneal_fraction;
        let frac = if total > 0.0 { (self.env_steps as f64 / total).min(1.0) } else { 1.0 };
        a.eps_start + (a.eps_end - a.eps_start) * frac
    }

    fn sync_latents(&mut self) -> Result<()> {
        let have = self.latents.as_ref().map_or(0, |m| m.nrows());
        if have == self.store.len() && self.latents.is_some() {
            return Ok(());
        }
        if self.store.is_empty() {
            return Ok(());
        }
        let fresh = self.vae.embed(&self.store.matrix_from(have))?;
        match &mut self.latents {
            Some(m) => m.append(Axis(0), fresh.view()).map_err(|e| Error::Shape(e.to_string()))?,
            None => self.latents = Some(fresh),
        }
        Ok(())
    }

    fn latent(&self, id: u32) -> Array1<f64> {
        self.latents.as_ref().expect("latents synced").row(id as usize).to_owned()
    }

    fn intern(&mut self, x: &Array1<f64>) -> Result<u32> {
        let id = self.store.intern(x);
        self.sync_latents()?;
        Ok(id)
    }

    fn explore(&mut self) -> Result<Vec<Episode>> {
        let n = self.family.n_train();
        let a = &self.config.agent;
        let budget = a.steps_per_epoch as f64 * (1.0 - self.config.aligned_fraction());
        let per_env = (budget / n as f64).round() as usize;
        let horizon = a.horizon;
        let episodes_per_env = per_env.div_ceil(horizon);
        let mut episodes = Vec::new();
        for e in 0..n {
            for _ in 0..episodes_per_env {
                let (x0, mut h) = self.family.reset(e, &mut self.rng)?;
                let mut id = self.intern(&x0)?;
                let goal = match &self.skew[e] {
                    Some(t) => t.sample(&mut self.rng)?,
                    None => id,
                };
                let zg = self.latent(goal);
                let mut ep = Episode { env: e, obs: vec![id], actions: Vec::with_capacity(horizon) };
                for _ in 0..horizon {
                    let z = self.latent(id);
                    let eps = self.epsilon();
                    let act = self.q.act(z.as_slice().unwrap(), zg.as_slice().unwrap(), eps, &mut self.rng)?;
                    let (x, h2) = self.family.step(e, &h, act, &mut self.rng)?;
                    h = h2;
                    let next = self.intern(&x)?;
                    self.replay[e].push(Transition { obs: id, action: act as u8, next_obs: next, goal });
                    self.env_steps += 1;
                    ep.obs.push(next);
                    ep.actions.push(act);
                    id = next;
                }
                episodes.push(ep);
            }
        }
        Ok(episodes)
    }

    fn sample_aligned(&mut self) -> Result<usize> {
        let f = self.config.aligned_fraction();
        if f <= 0.0 {
            return Ok(0);
        }
        let t = self.config.aligned.path_length;
        let cost = (t * self.family.n_train()) as f64;
        self.aligned_credit += self.config.agent.steps_per_epoch as f64 * f;
        let mut made = 0;
        while self.aligned_credit + 1e-9 >= cost {
            self.aligned_credit -= cost;
            let eps = self.epsilon();
            let source = self.config.aligned.action_source.clone();
            let n_actions = self.family.n_actions();
            let (q, vae, skew) = (&self.q, &self.vae, &self.skew);
            let mut goal: Option<Array1<f64>> = None;
            let latents = self.latents.as_ref().expect("latents synced");
            let policy = |x: &Array1<f64>, e: usize, rng: &mut ChaCha8Rng| -> Result<usize> {
                match source {
                    ActionSource::Random => Ok(rng.random_range(0..n_actions)),
                    ActionSource::Policy => {
                        let z = vae.embed(&x.clone().insert_axis(Axis(0)))?.row(0).to_owned();
                        if goal.is_none() {
                            goal = Some(match &skew[e] {
                                Some(t) => latents.row(t.sample(rng)? as usize).to_owned(),
                                None => z.clone(),
                            });
                        }
                        let zg = goal.as_ref().expect("set above");
                        q.act(z.as_slice().unwrap(), zg.as_slice().unwrap(), eps, rng)
                    }
                }
            };
            let record = collect_aligned(&self.family, t, self.config.aligned.initial_sharing, policy, &mut self.rng)?;
            self.aligned.push(record);
            self.env_steps += cost as u64;
            made += 1;
        }
        Ok(made)
    }

    fn q_phase(&mut self) -> Result<f64> {
        let n = self.family.n_train();
        if (0..n).any(|e| self.replay[e].is_empty()) {
            return Ok(0.0);
        }
        let a = self.config.agent.clone();
        let d = self.config.vae.latent_dim;
        let mut total = 0.0;
        for _ in 0..a.updates_per_epoch {
            let b = a.batch_size;
            let mut z = Array2::zeros((b, d));
            let mut zn = Array2::zeros((b, d));
            let mut zg = Array2::zeros((b, d));
            let mut actions = Vec::with_capacity(b);
            let mut rewards = Array1::zeros(b);
            let lat = self.latents.as_ref().expect("latents synced");
            for i in 0..b {
                let e = i % n;
                let tr = self.replay[e].sample(&mut self.rng)?;
                let goal = match &self.skew[e] {
                    Some(t) => {
                        self.goal_draws += 1;
                        if self.rng.random::<f64>() < a.goal_replace_prob {
                            self.goal_replacements += 1;
                            t.sample(&mut self.rng)?
                        } else {
                            tr.goal
                        }
                    }
                    None => tr.goal,
                };
                z.row_mut(i).assign(&lat.row(tr.obs as usize));
                zn.row_mut(i).assign(&lat.row(tr.next_obs as usize));
                zg.row_mut(i).assign(&lat.row(goal as usize));
                rewards[i] = latent_reward(
                    lat.row(tr.next_obs as usize).as_slice().unwrap(),
                    lat.row(goal as usize).as_slice().unwrap(),
                );
                actions.push(tr.action as usize);
            }
            let batch = QBatch { z, actions, z_next: zn, z_goal: zg, rewards };
            total += self.q.update(&batch, a.gamma)?;
        }
        Ok(if a.updates_per_epoch > 0 { total / a.updates_per_epoch as f64 } else { 0.0 })
    }

    fn relabel(&mut self, episodes: &[Episode]) {
        let a = &self.config.agent;
        let (j, strategy) = (a.relabels_per_step, a.relabel_strategy);
        for ep in episodes {
            for (t, h) in relabel_indices(ep.actions.len(), j, strategy, &mut self.rng) {
                self.replay[ep.env].push(Transition {
                    obs: ep.obs[t],
                    action: ep.actions[t] as u8,
                    next_obs: ep.obs[t + 1],
                    goal: ep.obs[h],
                });
            }
        }
    }

    fn refresh_skew(&mut self) -> Result<()> {
        let cap = self.config.agent.skew_candidates;
        let alpha = self.config.agent.skew_alpha;
        for e in 0..self.family.n_train() {
            let buf = &self.replay[e];
            if buf.is_empty() {
                self.skew[e] = None;
                continue;
            }
            let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
            for t in buf.iter() {
                *counts.entry(t.next_obs).or_default() += 1.0;
            }
            if counts.len() > cap {
                counts.clear();
                for _ in 0..cap {
                    let t = buf.sample(&mut self.rng)?;
                    *counts.entry(t.next_obs).or_default() += 1.0;
                }
            }
            let ids: Vec<u32> = counts.keys().copied().collect();
            let w: Vec<f64> = counts.values().copied().collect();
            let lat = self.latents.as_ref().expect("latents synced");
            let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            let z = lat.select(Axis(0), &idx);
            let kde = GaussianKde::scott(z.clone(), &w)?;
            let weights = skewed_weights_counted(&kde.log_density(&z), &w, alpha)?;
            self.skew[e] = Some(SkewTable { ids, weights });
        }
        Ok(())
    }

    fn vae_phase(&mut self) -> Result<LossTotals> {
        let n = self.family.n_train();
        let v = self.config.vae.clone();
        let ab = self.config.ablation.clone();
        let mut totals = LossTotals::default();
        if self.skew.iter().any(|s| s.is_none()) {
            return Ok(totals);
        }
        for _ in 0..v.steps_per_epoch {
            let mut replay = Vec::with_capacity(n);
            for e in 0..n {
                let table = self.skew[e].as_ref().expect("checked above");
                let ids = (0..v.replay_batch).map(|_| table.sample(&mut self.rng)).collect::<Result<Vec<_>>>()?;
                replay.push(self.store.gather(&ids));
            }
            let use_aligned = !ab.no_aligned_sampling && !self.aligned.is_empty();
            let aligned = if use_aligned { self.aligned.sample(v.aligned_batch, &mut self.rng)?.obs } else { Vec::new() };
            let mmd_on = !ab.no_mmd && (use_aligned || ab.no_aligned_sampling);
            let weights = VaeLossWeights {
                beta: v.beta,
                alpha_mmd: if mmd_on { v.alpha_mmd } else { 0.0 },
                alpha_diff: if ab.no_diff { 0.0 } else { v.alpha_diff },
                mmd_on_replay: ab.no_aligned_sampling,
            };
            let out = vae_loss(&self.vae, &VaeBatch { replay, aligned }, weights, &self.expansion, &mut self.rng)?;
            adam_step(&mut self.vae.encoder, &out.encoder_grads, &mut self.enc_adam)?;
            adam_step(&mut self.vae.decoder, &out.decoder_grads, &mut self.dec_adam)?;
            totals.recon += out.recon;
            totals.kl += out.kl;
            totals.mmd += out.mmd;
            totals.diff += out.diff;
            totals.total += out.total;
            totals.steps += 1;
        }
        if !self.vae.is_finite() {
            return Err(Error::NonFinite("VAE parameters diverged".into()));
        }
        Ok(totals)
    }

    /// Evaluation RNG for an epoch, independent of the training stream.
    fn eval_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.config.seed);
        r.set_stream(1_000 + epoch as u64);
        r
    }

    pub fn evaluate_now(&self, epoch: usize) -> Result<EvalRecord> {
        let mut rng = self.eval_rng(epoch);
        let policy = LatentGreedy { q: &self.q, vae: &self.vae };
        let (episodes, horizon) = (self.config.eval.episodes_per_env, self.config.eval_horizon());
        let run = |envs: &[usize], rng: &mut ChaCha8Rng| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut s = Vec::new();
            let mut d = Vec::new();
            for &e in envs {
                let r = evaluate(&policy, &self.family, e, episodes, horizon, rng)?;
                s.push(r.success_rate);
                d.push(r.mean_distance);
            }
            Ok((s, d))
        };
        let train = self.family.train_indices();
        let test = self.family.test_indices();
        let (train_success, train_distance) = run(&train, &mut rng)?;
        let (test_success, test_distance) = run(&test, &mut rng)?;
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let ler_train = latent_error_rate(&self.vae, &self.family, &train, None, &mut rng)?;
        let (ler_test, ler_test_excluded) = if test.is_empty() {
            (0.0, 0)
        } else {
            let r = latent_error_rate(&self.vae, &self.family, &test, None, &mut rng)?;
            (r.value, r.excluded)
        };
        let al_train = measure_alignment(&self.vae, &self.family, &train, &mut rng)?;
        let (eta_test, psi_test) = if test.is_empty() {
            (0.0, 0.0)
        } else {
            let r = measure_alignment(&self.vae, &self.family, &test, &mut rng)?;
            (r.eta, r.psi)
        };
        Ok(EvalRecord {
            mean_train_success: mean(&train_success),
            mean_test_success: mean(&test_success),
            train_success,
            train_distance,
            test_success,
            test_distance,
            ler_train: ler_train.value,
            ler_test,
            ler_excluded: ler_train.excluded + ler_test_excluded,
            eta_train: al_train.eta,
            psi_train: al_train.psi,
            eta_test,
            psi_test,
            max_distortion: al_train.max_distortion,
        })
    }

    /// One pass of exploration, aligned sampling, Q-learning, relabeling,
    /// skew refresh and VAE training, followed by evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_done() {
            return Err(Error::Invalid("all configured epochs are complete".into()));
        }
        self.sync_latents()?;
        let episodes = self.explore()?;
        let aligned_records = self.sample_aligned()?;
        let td = self.q_phase()?;
        self.relabel(&episodes);
        self.refresh_skew()?;
        let losses = self.vae_phase()?;
        // Rebuild from scratch so a resumed run sees the same cache.
        self.latents = None;
        self.sync_latents()?;
        let epoch = self.epoch;
        self.epoch += 1;
        let cfg = &self.config;
        let eval = if (epoch + 1).is_multiple_of(cfg.eval.every) || self.is_done() {
            Some(self.evaluate_now(epoch)?)
        } else {
            None
        };
        let k = losses.steps.max(1) as f64;
        let record = EpochRecord {
            schema_version: SCHEMA_VERSION,
            epoch,
            env_steps: self.env_steps,
            epsilon: self.epsilon(),
            aligned_records,
            loss_recon: losses.recon / k,
            loss_kl: losses.kl / k,
            loss_mmd: losses.mmd / k,
            loss_diff: losses.diff / k,
            loss_vae_total: losses.total / k,
            loss_td: td,
            eval,
        };
        Ok(record)
    }
}

/// Trains for the configured number of epochs on `family`.
pub fn run_pasf(config: &ExperimentConfig, family: GbmdpFamily) -> Result<TrainingReport> {
    let mut trainer = Trainer::new(config.clone(), family)?;
    let mut report = TrainingReport::default();
    while !trainer.is_done() {
        report.records.push(trainer.run_epoch()?);
    }
    Ok(report)
}
