//! Alignment losses on latent batches.
//!
//! [`RandomExpansion`] is a frozen random cosine feature map `ψ`. The MMD
//! loss compares `ψ` means of aligned latent batches across environments; the
//! difference loss rewards spread within each environment's batch. Both
//! return gradients with respect to the latents so callers can chain them
//! into the encoder.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomExpansion {
    /// `D_psi x d`, iid standard normal.
    pub w: Array2<f64>,
    /// Phases uniform on `[0, 2π)`.
    pub b: Array1<f64>,
    pub gamma: f64,
}

impl RandomExpansion {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, features: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        if features == 0 || latent_dim == 0 {
            return Err(Error::Config("random expansion needs positive dimensions".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("expansion scale {gamma} must be > 0")));
        }
        let w = Array2::from_shape_fn((features, latent_dim), |_| StandardNormal.sample(rng));
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let b = Array1::from_shape_fn(features, |_| phase.sample(rng));
        Ok(RandomExpansion { w, b, gamma })
    }

    pub fn features(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    fn freq(&self) -> f64 {
        (2.0 / self.gamma).sqrt()
    }

    fn amp(&self) -> f64 {
        (2.0 / self.features() as f64).sqrt()
    }

    /// Phase arguments `sqrt(2/γ) W z + b` for each row of `z`.
    fn phases(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.w.t()) * self.freq() + &self.b
    }

    pub fn psi(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(z)?;
        let amp = self.amp();
        Ok(self.phases(z).mapv(|u| amp * u.cos()))
    }

    fn check(&self, z: &Array2<f64>) -> Result<()> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent width {} vs expansion input {}",
                z.ncols(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Gradient of `Σ_b <v, ψ(z_b)> * scale` with respect to every `z_b`.
    fn pullback(&self, z: &Array2<f64>, v: &Array1<f64>, scale: f64) -> Array2<f64> {
        let k = -self.amp() * self.freq() * scale;
        let s = self.phases(z).mapv(f64::sin) * v;
        s.dot(&self.w) * k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWithGrads {
    pub value: f64,
    /// One gradient per input batch, same shape as the batch.
    pub grads: Vec<Array2<f64>>,
}

/// Squared distance between `ψ` means, averaged over every unordered pair of
/// batches. `batches[i]` holds the latents of environment `i`; rows with the
/// same index across batches are aligned.
pub fn mmd_loss(exp: &RandomExpansion, batches: &[Array2<f64>]) -> Result<LossWithGrads> {
    if batches.len() < 2 {
        return Err(Error::Invalid("MMD needs at least two environments".into()));
    }
    let bsz = batches[0].nrows();
    if bsz == 0 {
        return Err(Error::Empty("MMD batch"));
    }
    if batches.iter().any(|z| z.nrows() != bsz) {
        return Err(Error::Shape("MMD batches must have equal sizes".into()));
    }
    let means = batches
        .iter()
        .map(|z| exp.psi(z).map(|f| f.mean_axis(Axis(0)).expect("non-empty")))
        .collect::<Result<Vec<_>>>()?;
    let n = batches.len();
    let pairs = (n * (n - 1) / 2) as f64;
    let mut value = 0.0;
    let mut dmeans = vec![Array1::<f64>::zeros(exp.features()); n];
    for i in 0..n {
        for j in i + 1..n {
            let diff = &means[i] - &means[j];
            value += diff.dot(&diff) / pairs;
            let g = diff * (2.0 / pairs);
            dmeans[i] += &g;
            dmeans[j] -= &g;
        }
    }
    let grads = batches
        .iter()
        .zip(&dmeans)
        .map(|(z, dm)| exp.pullback(z, dm, 1.0 / bsz as f64))
        .collect();
    Ok(LossWithGrads { value, grads })
}

/// Negative mean squared distance over all ordered pairs (self pairs
/// included) within each batch, averaged over batches.
pub fn diff_loss(batches: &[Array2<f64>]) -> Result<LossWithGrads> {
    if batches.is_empty() || batches.iter().any(|z| z.nrows() == 0) {
        return Err(Error::Empty("difference-loss batch"));
    }
    let n = batches.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(batches.len());
    for z in batches {
        let b = z.nrows() as f64;
        let centered = z - &z.mean_axis(Axis(0)).expect("non-empty");
        // mean_{i,j} |z_i - z_j|^2 = 2 mean_i |z_i - mean|^2
        value -= 2.0 * centered.mapv(|v| v * v).sum() / b / n;
        grads.push(centered * (-4.0 / b / n));
    }
    Ok(LossWithGrads { value, grads })
}

/// Difference loss over explicitly drawn index pairs of one batch.
pub fn diff_loss_pairs(z: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<LossWithGrads> {
    if pairs.is_empty() {
        return Err(Error::Empty("difference-loss pairs"));
    }
    let m = pairs.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(z.raw_dim());
    for &(i, j) in pairs {
        if i >= z.nrows() || j >= z.nrows() {
            return Err(Error::Shape(format!("pair ({i}, {j}) out of range")));
        }
        let d = &z.row(i) - &z.row(j);
        value -= d.dot(&d) / m;
        let g = d * (2.0 / m);
        let mut gi = grad.row_mut(i);
        gi -= &g;
        let mut gj = grad.row_mut(j);
        gj += &g;
    }
    Ok(LossWithGrads { value, grads: vec![grad] })
}

pub fn pa_loss(alpha_mmd: f64, alpha_diff: f64, mmd: f64, diff: f64) -> Result<f64> {
    if !(alpha_mmd >= 0.0 && alpha_diff >= 0.0) {
        return Err(Error::Config("loss coefficients must be >= 0".into()));
    }
    Ok(alpha_mmd * mmd + alpha_diff * diff)
}

/// Both sides of `E_{x,x'}|f(x) - g(x')|^2 >= 1/2 E_x |f(x) - g(x)|^2` for a
/// distribution with finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossPairReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn cross_pair_inequality(p: &[f64], f: &[Vec<f64>], g: &[Vec<f64>]) -> Result<CrossPairReport> {
    if p.is_empty() || p.len() != f.len() || p.len() != g.len() {
        return Err(Error::Shape("support, f and g must have equal non-zero length".into()));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..p.len() {
        rhs += 0.5 * p[i] * sq(&f[i], &g[i]);
        for j in 0..p.len() {
            lhs += p[i] * p[j] * sq(&f[i], &g[j]);
        }
    }
    Ok(CrossPairReport { lhs, rhs, holds: lhs >= rhs - 1e-12 })
}

/// Monte Carlo check of `E[L_MMD] >= (1/B) E|ψ(z^e_b) - ψ(z^e'_b)|^2`: the
/// per-batch difference of the two sides must have mean at least
/// `-3` standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MmdChainReport {
    pub batches: usize,
    pub mean_mmd: f64,
    pub mean_bound: f64,
    pub std_err: f64,
    pub holds: bool,
}

pub fn mmd_chain_check<I>(exp: &RandomExpansion, pairs: I) -> Result<MmdChainReport>
where
    I: IntoIterator<Item = (Array2<f64>, Array2<f64>)>,
{
    let mut diffs = Vec::new();
    let mut sum_mmd = 0.0;
    let mut sum_bound = 0.0;
    for (za, zb) in pairs {
        let mmd = mmd_loss(exp, &[za.clone(), zb.clone()])?.value;
        let d = exp.psi(&za)? - exp.psi(&zb)?;
        let bsz = za.nrows() as f64;
        let bound = d.mapv(|v| v * v).sum() / bsz / bsz;
        sum_mmd += mmd;
        sum_bound += bound;
        diffs.push(mmd - bound);
    }
    let k = diffs.len();
    if k < 2 {
        return Err(Error::Invalid("chain check needs at least two batches".into()));
    }
    let mean = diffs.iter().sum::<f64>() / k as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let std_err = (var / k as f64).sqrt();
    Ok(MmdChainReport {
        batches: k,
        mean_mmd: sum_mmd / k as f64,
        mean_bound: sum_bound / k as f64,
        std_err,
        holds: mean >= -3.0 * std_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use ndarray::array;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(d: usize, k: usize, seed: u64) -> RandomExpansion {
        RandomExpansion::new(d, k, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_batch(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_expansion_is_constant() {
        let e = RandomExpansion { w: Array2::zeros((16, 3)), b: Array1::zeros(16), gamma: 1.0 };
        let f = e.psi(&array![[1.0, 2.0, 3.0]]).unwrap();
        assert!(f.iter().all(|&v| (v - (2.0f64 / 16.0).sqrt()).abs() < 1e-15));
    }

    #[test]
    fn default_dimension_and_norm_bound() {
        let e = exp(8, 1024, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_batch(10, 8, &mut rng) * 5.0;
        let f = e.psi(&z).unwrap();
        assert_eq!(f.ncols(), 1024);
        for row in f.rows() {
            assert!(row.dot(&row).sqrt() <= 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn identical_batches_have_zero_mmd() {
        let e = exp(3, 64, 0);
        let z = random_batch(5, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let out = mmd_loss(&e, &[z.clone(), z]).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn single_feature_mmd_matches_trig() {
        // ψ(z) = sqrt(2) cos(sqrt(2) z) with one feature, W = 1, b = 0.
        let e = RandomExpansion { w: array![[1.0]], b: array![0.0], gamma: 1.0 };
        let (z, delta) = (0.3f64, 0.2f64);
        let out = mmd_loss(&e, &[array![[z]], array![[z + delta]]]).unwrap();
        let r2 = 2f64.sqrt();
        let expected = (r2 * (r2 * z).cos() - r2 * (r2 * (z + delta)).cos()).powi(2);
        assert!((out.value - expected).abs() < 1e-15);
    }

    #[test]
    fn two_point_diff_loss() {
        let out = diff_loss(&[array![[0.0, 0.0], [1.0, 0.0]]]).unwrap();
        assert!((out.value + 0.5).abs() < 1e-15);
        let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let p = diff_loss_pairs(&array![[0.0, 0.0], [1.0, 0.0]], &pairs).unwrap();
        assert!((p.value + 0.5).abs() < 1e-15);
        assert_eq!(p.grads[0], out.grads[0]);
    }

    #[test]
    fn identical_latents_have_zero_diff() {
        let z = Array2::from_elem((4, 3), 0.7);
        assert_eq!(diff_loss(&[z]).unwrap().value, 0.0);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let e = exp(2, 8, 0);
        let z = Array2::<f64>::zeros((0, 2));
        assert!(mmd_loss(&e, &[z.clone(), z.clone()]).is_err());
        assert!(diff_loss(&[z]).is_err());
    }

    #[test]
    fn pa_loss_weighting() {
        assert_eq!(pa_loss(0.0, 0.0, 3.0, -2.0).unwrap(), 0.0);
        assert_eq!(pa_loss(1000.0, 0.1, 0.002, -4.0).unwrap(), 2.0 - 0.4);
        let a = pa_loss(2.0, 0.0, 0.5, 0.0).unwrap();
        let b = pa_loss(4.0, 0.0, 0.5, 0.0).unwrap();
        assert_eq!(2.0 * a, b);
        assert!(pa_loss(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    fn check_grads(f: impl Fn(&[Array2<f64>]) -> LossWithGrads, batches: Vec<Array2<f64>>, seed: u64) {
        let shape = batches[0].dim();
        let flat: Vec<f64> = batches.iter().flat_map(|z| z.iter().copied()).collect();
        let analytic: Vec<f64> = f(&batches).grads.iter().flat_map(|g| g.iter().copied()).collect();
        let n = batches.len();
        let unflat = |t: &[f64]| -> Vec<Array2<f64>> {
            (0..n)
                .map(|i| Array2::from_shape_vec(shape, t[i * shape.0 * shape.1..(i + 1) * shape.0 * shape.1].to_vec()).unwrap())
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = GradCheckOptions { max_coords: None, ..Default::default() };
        let rep = grad_check(|t| Ok(f(&unflat(t)).value), &flat, &analytic, opts, None, &mut rng).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let e = exp(3, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batches = (0..3).map(|_| random_batch(4, 3, &mut rng)).collect();
        check_grads(|b| mmd_loss(&e, b).unwrap(), batches, 6);
    }

    #[test]
    fn diff_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batches = (0..2).map(|_| random_batch(5, 3, &mut rng)).collect();
        check_grads(|b| diff_loss(b).unwrap(), batches, 8);
    }

    #[test]
    fn cross_pair_inequality_examples() {
        let r = cross_pair_inequality(&[0.5, 0.5], &[vec![0.0], vec![1.0]], &[vec![0.0], vec![1.0]]).unwrap();
        // lhs = 1/4 (0 + 1 + 1 + 0) = 0.5, rhs = 0
        assert!((r.lhs - 0.5).abs() < 1e-15 && r.rhs == 0.0 && r.holds);
    }

    #[test]
    fn chain_holds_for_noisy_aligned_latents() {
        let e = exp(2, 128, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pairs: Vec<_> = (0..300)
            .map(|_| {
                let z = random_batch(8, 2, &mut rng);
                let noise = random_batch(8, 2, &mut rng) * 0.3;
                (z.clone(), z + noise)
            })
            .collect();
        let rep = mmd_chain_check(&e, pairs).unwrap();
        assert!(rep.holds, "{rep:?}");
    }

    proptest! {
        #[test]
        fn mmd_nonnegative_and_permutation_invariant(seed in 0u64..1000, rot in 1usize..5) {
            let e = exp(2, 32, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let a = random_batch(5, 2, &mut rng);
            let b = random_batch(5, 2, &mut rng);
            let v = mmd_loss(&e, &[a.clone(), b.clone()]).unwrap().value;
            prop_assert!(v >= 0.0);
            let mut rows: Vec<usize> = (0..5).collect();
            rows.rotate_left(rot);
            let a2 = a.select(Axis(0), &rows);
            let v2 = mmd_loss(&e, &[a2, b]).unwrap().value;
            prop_assert!((v - v2).abs() < 1e-12);
        }

        #[test]
        fn cross_pair_holds_on_random_support(seed in 0u64..10_000, k in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let f: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let g: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            prop_assert!(cross_pair_inequality(&p, &f, &g).unwrap().holds);
        }
    }
}
