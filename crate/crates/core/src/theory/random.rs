use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::finite::{FiniteGbmdp, TabularPolicy};
use crate::error::Result;

/// Ranges for random instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub states: Vec<usize>,
    pub actions: usize,
    pub envs: usize,
    pub gammas: Vec<f64>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec { states: vec![2, 3, 4], actions: 2, envs: 1, gammas: vec![0.5, 0.9] }
    }
}

/// A Dirichlet(1, ..., 1) draw.
pub fn simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Dense random dynamics and initial distribution; every state is a goal.
pub fn random_instance<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> Result<FiniteGbmdp> {
    let n = *spec.states.choose(rng).unwrap_or(&2);
    let gamma = *spec.gammas.choose(rng).unwrap_or(&0.9);
    let mut p = Vec::with_capacity(n * spec.actions * n);
    for _ in 0..n * spec.actions {
        p.extend(simplex(n, rng));
    }
    let rho0 = simplex(n, rng);
    FiniteGbmdp::new(n, spec.actions, spec.envs, p, rho0, (0..n).collect(), gamma)
}

/// Uniformly random stochastic policy, or deterministic when `deterministic`.
pub fn random_policy<R: Rng + ?Sized>(fg: &FiniteGbmdp, invariant: bool, deterministic: bool, rng: &mut R) -> Result<TabularPolicy> {
    if deterministic {
        TabularPolicy::deterministic(fg, invariant, |_, _, _| rng.random_range(0..fg.n_actions))
    } else {
        TabularPolicy::from_fn(fg, invariant, |_, _, _| simplex(fg.n_actions, rng))
    }
}
