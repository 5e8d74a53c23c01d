//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use pasf_core::gbmdp::{FamilyConfig, GbmdpFamily};
use pasf_core::vae::{VaeBatch, VaeParams};
use pasf_core::nn::Activation;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn grid_family(seed: u64) -> GbmdpFamily {
    GbmdpFamily::generate(&FamilyConfig::grid(5, 5, 3, 2), seed).expect("valid grid family")
}

pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn vae_fixture<R: Rng + ?Sized>(family: &GbmdpFamily, batch: usize, rng: &mut R) -> (VaeParams, VaeBatch) {
    let params = VaeParams::new(family.obs_dim, 4, family.n_train(), &[64, 64], Activation::Tanh, rng)
        .expect("valid VAE sizes");
    let per_env = |rng: &mut R| (0..family.n_train()).map(|_| gaussian(batch, family.obs_dim, rng)).collect();
    let replay = per_env(rng);
    let aligned = per_env(rng);
    (params, VaeBatch { replay, aligned })
}
