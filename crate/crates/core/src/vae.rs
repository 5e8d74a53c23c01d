//! Environment-indexed β-VAE and representation diagnostics.
//!
//! The encoder maps an observation to a diagonal Gaussian `(μ, log σ²)`. The
//! decoder sees `[z ; onehot(e)]`, so environment-specific appearance can be
//! rendered back without the latent having to carry it.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbmdp::GbmdpFamily;
use crate::losses::{diff_loss, mmd_loss, RandomExpansion};
use crate::nn::{Activation, Mlp, MlpGrads};

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub n_envs: usize,
}

/// Anything that maps a batch of observations to latents row by row.
pub trait Encoder {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>>;
}

impl VaeParams {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        latent_dim: usize,
        n_envs: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc = vec![obs_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent_dim);
        let mut dec = vec![latent_dim + n_envs];
        dec.extend(hidden.iter().rev());
        dec.push(obs_dim);
        Ok(VaeParams {
            encoder: Mlp::new(&enc, activation, Activation::Identity, rng)?,
            decoder: Mlp::new(&dec, activation, Activation::Identity, rng)?,
            latent_dim,
            n_envs,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Mean and clamped log-variance for each row of `x`.
    pub fn encode(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.encoder.predict(x)?;
        let d = self.latent_dim;
        let mu = out.slice(s![.., ..d]).to_owned();
        let logvar = out.slice(s![.., d..]).mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok((mu, logvar))
    }

    /// Reparameterized sample `μ + σ ⊙ η`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, x: &Array2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        let (mu, logvar) = self.encode(x)?;
        let noise: Array2<f64> = Array2::from_shape_fn(mu.raw_dim(), |_| StandardNormal.sample(rng));
        Ok(mu + logvar.mapv(|v| (0.5 * v).exp()) * noise)
    }

    fn decoder_input(&self, z: &Array2<f64>, envs: &[usize]) -> Result<Array2<f64>> {
        if z.nrows() != envs.len() {
            return Err(Error::Shape("one env index per latent row required".into()));
        }
        let mut onehot = Array2::zeros((z.nrows(), self.n_envs));
        for (r, &e) in envs.iter().enumerate() {
            if e >= self.n_envs {
                return Err(Error::UnknownEnv(e));
            }
            onehot[[r, e]] = 1.0;
        }
        Ok(concatenate![Axis(1), z.view(), onehot.view()])
    }

    /// Reconstruction of each latent row for the matching env index.
    pub fn decode(&self, z: &Array2<f64>, envs: &[usize]) -> Result<Array2<f64>> {
        self.decoder.predict(&self.decoder_input(z, envs)?)
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.encoder.params_flat();
        p.extend(self.decoder.params_flat());
        p
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let k = self.encoder.num_params();
        if flat.len() != self.num_params() {
            return Err(Error::Shape("VAE parameter vector length".into()));
        }
        self.encoder.set_params_flat(&flat[..k])?;
        self.decoder.set_params_flat(&flat[k..])
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }
}

impl Encoder for VaeParams {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let out = self.encoder.predict(x)?;
        Ok(out.slice(s![.., ..self.latent_dim]).to_owned())
    }
}

/// Wraps a plain function as an [`Encoder`].
pub struct FnEncoder<F>(pub F);

impl<F> Encoder for FnEncoder<F>
where
    F: Fn(&Array2<f64>) -> Result<Array2<f64>>,
{
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        (self.0)(x)
    }
}

/// Encoder that recognizes the hidden state by nearest state block over all
/// environments and returns a fixed code for it.
pub struct StateOracleEncoder<'a> {
    family: &'a GbmdpFamily,
    codes: Array2<f64>,
}

impl<'a> StateOracleEncoder<'a> {
    pub fn onehot(family: &'a GbmdpFamily) -> Self {
        StateOracleEncoder { family, codes: Array2::eye(family.n_states()) }
    }

    pub fn with_codes(family: &'a GbmdpFamily, codes: Array2<f64>) -> Result<Self> {
        if codes.nrows() != family.n_states() {
            return Err(Error::Shape("one code row per state required".into()));
        }
        Ok(StateOracleEncoder { family, codes })
    }

    pub fn state_of(&self, x: &[f64]) -> usize {
        let n = self.family.n_states();
        let mut best = (0, f64::INFINITY);
        for env in self.family.envs() {
            for s in 0..n {
                let d: f64 = env.state_block(s).iter().zip(&x[..n]).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.1 {
                    best = (s, d);
                }
            }
        }
        best.0
    }
}

impl Encoder for StateOracleEncoder<'_> {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.codes.ncols()));
        for (r, row) in x.rows().into_iter().enumerate() {
            let s = self.state_of(row.as_slice().expect("contiguous rows"));
            out.row_mut(r).assign(&self.codes.row(s));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeLossWeights {
    pub beta: f64,
    pub alpha_mmd: f64,
    pub alpha_diff: f64,
    /// Match ψ means on the per-env replay batches instead of aligned ones.
    pub mmd_on_replay: bool,
}

/// Inputs for one VAE step. `replay[i]` and `aligned[i]` hold observations
/// of training env `i`; `aligned` may be empty when no aligned data is used.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeBatch {
    pub replay: Vec<Array2<f64>>,
    pub aligned: Vec<Array2<f64>>,
}

impl VaeBatch {
    fn rows(&self) -> (Array2<f64>, Vec<usize>) {
        let parts: Vec<_> = self.replay.iter().chain(&self.aligned).map(|m| m.view()).collect();
        let x = concatenate(Axis(0), &parts).expect("equal widths");
        let mut envs = Vec::with_capacity(x.nrows());
        for group in [&self.replay, &self.aligned] {
            for (e, m) in group.iter().enumerate() {
                envs.extend(std::iter::repeat_n(e, m.nrows()));
            }
        }
        (x, envs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeLossOutput {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub mmd: f64,
    pub diff: f64,
    pub encoder_grads: MlpGrads,
    pub decoder_grads: MlpGrads,
}

impl VaeLossOutput {
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut g = self.encoder_grads.to_flat();
        g.extend(self.decoder_grads.to_flat());
        g
    }
}

/// Loss with freshly sampled reparameterization noise.
pub fn vae_loss<R: Rng + ?Sized>(
    params: &VaeParams,
    batch: &VaeBatch,
    weights: VaeLossWeights,
    expansion: &RandomExpansion,
    rng: &mut R,
) -> Result<VaeLossOutput> {
    let rows: usize = batch.replay.iter().chain(&batch.aligned).map(|m| m.nrows()).sum();
    let noise = Array2::from_shape_fn((rows, params.latent_dim), |_| StandardNormal.sample(rng));
    vae_loss_with_noise(params, batch, weights, expansion, &noise)
}

/// Reconstruction (squared error summed over coordinates, averaged over
/// rows) plus `β` KL over every row of the batch, plus the weighted MMD and
/// difference terms on the latent means.
pub fn vae_loss_with_noise(
    params: &VaeParams,
    batch: &VaeBatch,
    weights: VaeLossWeights,
    expansion: &RandomExpansion,
    noise: &Array2<f64>,
) -> Result<VaeLossOutput> {
    let n_env = params.n_envs;
    if batch.replay.len() != n_env || !(batch.aligned.is_empty() || batch.aligned.len() == n_env) {
        return Err(Error::Shape(format!("expected per-env batches for {n_env} envs")));
    }
    if weights.alpha_mmd > 0.0 && !weights.mmd_on_replay && batch.aligned.is_empty() {
        return Err(Error::Invalid("MMD weight is positive but no aligned batch was given".into()));
    }
    let (x, envs) = batch.rows();
    let m = x.nrows();
    if m == 0 {
        return Err(Error::Empty("VAE batch"));
    }
    if noise.dim() != (m, params.latent_dim) {
        return Err(Error::Shape("noise shape".into()));
    }
    let d = params.latent_dim;
    let mf = m as f64;

    let enc_cache = params.encoder.forward(&x)?;
    let raw = enc_cache.output();
    let mu = raw.slice(s![.., ..d]).to_owned();
    let raw_logvar = raw.slice(s![.., d..]).to_owned();
    let logvar = raw_logvar.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
    let sigma = logvar.mapv(|v| (0.5 * v).exp());
    let z = &mu + &(&sigma * noise);

    let dec_in = params.decoder_input(&z, &envs)?;
    let dec_cache = params.decoder.forward(&dec_in)?;
    let resid = dec_cache.output() - &x;
    let recon = resid.mapv(|v| v * v).sum() / mf;
    let (decoder_grads, d_dec_in) = params.decoder.backward(&dec_cache, &(resid * (2.0 / mf)))?;
    let dz = d_dec_in.slice(s![.., ..d]).to_owned();

    let var = sigma.mapv(|s| s * s);
    let kl = 0.5 * (mu.mapv(|v| v * v) + &var - 1.0 - &logvar).sum() / mf;

    let mut dmu = dz.clone() + &mu * (weights.beta / mf);
    let mut dlogvar = &dz * noise * &sigma * 0.5 + (&var - 1.0) * (0.5 * weights.beta / mf);

    let r_rows: usize = batch.replay.iter().map(|b| b.nrows()).sum();
    let groups = |start: usize, parts: &[Array2<f64>]| -> Vec<(usize, usize)> {
        let mut off = start;
        parts
            .iter()
            .map(|p| {
                let r = (off, off + p.nrows());
                off += p.nrows();
                r
            })
            .collect()
    };
    let replay_rows = groups(0, &batch.replay);
    let aligned_rows = groups(r_rows, &batch.aligned);

    let mut mmd = 0.0;
    if weights.alpha_mmd > 0.0 {
        let rows = if weights.mmd_on_replay { &replay_rows } else { &aligned_rows };
        let lat: Vec<Array2<f64>> = rows.iter().map(|&(a, b)| mu.slice(s![a..b, ..]).to_owned()).collect();
        let out = mmd_loss(expansion, &lat)?;
        mmd = out.value;
        for (&(a, b), g) in rows.iter().zip(&out.grads) {
            let mut blk = dmu.slice_mut(s![a..b, ..]);
            blk.scaled_add(weights.alpha_mmd, g);
        }
    }
    let mut diff = 0.0;
    if weights.alpha_diff > 0.0 {
        let lat: Vec<Array2<f64>> = replay_rows.iter().map(|&(a, b)| mu.slice(s![a..b, ..]).to_owned()).collect();
        let out = diff_loss(&lat)?;
        diff = out.value;
        for (&(a, b), g) in replay_rows.iter().zip(&out.grads) {
            let mut blk = dmu.slice_mut(s![a..b, ..]);
            blk.scaled_add(weights.alpha_diff, g);
        }
    }

    ndarray::Zip::from(&mut dlogvar).and(&raw_logvar).for_each(|g, &r| {
        if r.abs() > LOGVAR_CLAMP {
            *g = 0.0
        }
    });
    let d_raw = concatenate![Axis(1), dmu.view(), dlogvar.view()];
    let (encoder_grads, _) = params.encoder.backward(&enc_cache, &d_raw)?;

    let total = recon + weights.beta * kl + weights.alpha_mmd * mmd + weights.alpha_diff * diff;
    if !total.is_finite() {
        return Err(Error::NonFinite("VAE loss".into()));
    }
    Ok(VaeLossOutput { total, recon, kl, mmd, diff, encoder_grads, decoder_grads })
}

/// Closed-form `KL(N(μ, σ²) || N(0, I))` per row.
pub fn kl_to_standard(mu: &Array1<f64>, logvar: &Array1<f64>) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

fn observation_table<R: Rng + ?Sized>(
    family: &GbmdpFamily,
    envs: &[usize],
    states: &[usize],
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((envs.len() * states.len(), family.obs_dim));
    for (i, &e) in envs.iter().enumerate() {
        let env = family.env(e)?;
        for (j, &s) in states.iter().enumerate() {
            let b = env.initial_factor(rng);
            x.row_mut(i * states.len() + j).assign(&env.observe(s, &b));
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerReport {
    pub value: f64,
    pub samples: usize,
    /// Terms dropped because the embedding had zero norm.
    pub excluded: usize,
}

/// Mean over envs in `envs` and states of `|Φ(x^e(s)) - Φ(x^{e0}(s))| /
/// |Φ(x^e(s))|`, with `e0 = envs[0]`. Uses every state when `n_states` is
/// `None`, otherwise that many uniformly drawn states.
pub fn latent_error_rate<E: Encoder + ?Sized, R: Rng + ?Sized>(
    encoder: &E,
    family: &GbmdpFamily,
    envs: &[usize],
    n_states: Option<usize>,
    rng: &mut R,
) -> Result<LerReport> {
    if envs.is_empty() {
        return Err(Error::Empty("environment set"));
    }
    let states: Vec<usize> = match n_states {
        None => (0..family.n_states()).collect(),
        Some(k) => (0..k).map(|_| rng.random_range(0..family.n_states())).collect(),
    };
    let k = states.len();
    let z = encoder.embed(&observation_table(family, envs, &states, rng)?)?;
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for i in 0..envs.len() {
        for j in 0..k {
            let zi = z.row(i * k + j);
            let z0 = z.row(j);
            let norm = zi.dot(&zi).sqrt();
            if norm == 0.0 {
                excluded += 1;
                continue;
            }
            let d = &zi - &z0;
            sum += d.dot(&d).sqrt() / norm;
            used += 1;
        }
    }
    Ok(LerReport { value: if used > 0 { sum / used as f64 } else { 0.0 }, samples: used, excluded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Largest same-state latent distance across envs.
    pub eta: f64,
    /// Smallest ratio of cross-state latent distance to state distance.
    pub psi: f64,
    /// Largest latent-to-observation distance ratio over the evaluated pairs.
    pub max_distortion: f64,
    /// True when pairs were subsampled instead of enumerated.
    pub sampled: bool,
}

const MAX_ENUMERATED_POINTS: usize = 2048;

/// Empirical `(η, ψ)` of an encoder over `envs`, using the state-embedding
/// Euclidean metric on states.
pub fn measure_alignment<E: Encoder + ?Sized, R: Rng + ?Sized>(
    encoder: &E,
    family: &GbmdpFamily,
    envs: &[usize],
    rng: &mut R,
) -> Result<AlignmentReport> {
    if envs.is_empty() {
        return Err(Error::Empty("environment set"));
    }
    let n = family.n_states();
    let points = envs.len() * n;
    let sampled = points > MAX_ENUMERATED_POINTS;
    let states: Vec<usize> = if sampled {
        (0..MAX_ENUMERATED_POINTS / envs.len()).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let x = observation_table(family, envs, &states, rng)?;
    let z = encoder.embed(&x)?;
    let emb: Vec<Vec<f64>> = (0..n).map(|s| family.spec.states.embedding(s)).collect();
    let label = |r: usize| states[r % states.len()];
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    };
    let mut eta: f64 = 0.0;
    let mut psi = f64::INFINITY;
    let mut max_distortion: f64 = 0.0;
    for i in 0..z.nrows() {
        for j in i + 1..z.nrows() {
            let dz = dist(z.row(i), z.row(j));
            let dx = dist(x.row(i), x.row(j));
            if dx > 0.0 {
                max_distortion = max_distortion.max(dz / dx);
            }
            let (si, sj) = (label(i), label(j));
            if si == sj {
                eta = eta.max(dz);
            } else {
                let ds: f64 = emb[si].iter().zip(&emb[sj]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                psi = psi.min(dz / ds);
            }
        }
    }
    if psi.is_infinite() {
        psi = 0.0;
    }
    Ok(AlignmentReport { eta, psi, max_distortion, sampled })
}

/// Fraction of `(s, e, e')` over training envs for which decoding
/// `embed(x^e(s))` as env `e'` lands nearest to state `s` of env `e'`.
pub fn shuffled_reconstruction_accuracy<R: Rng + ?Sized>(
    params: &VaeParams,
    family: &GbmdpFamily,
    rng: &mut R,
) -> Result<f64> {
    let n = family.n_states();
    let train = family.train_indices();
    let states: Vec<usize> = (0..n).collect();
    let z = params.embed(&observation_table(family, &train, &states, rng)?)?;
    let mut hits = 0;
    let mut total = 0;
    for &target in &train {
        let x_hat = params.decode(&z, &vec![target; z.nrows()])?;
        let env = family.env(target)?;
        for r in 0..z.nrows() {
            let s = r % n;
            if env.decode_state(x_hat.row(r).as_slice().expect("contiguous")) == s {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
