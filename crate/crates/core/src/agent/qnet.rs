use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads};

/// Goal-conditioned Q-learning batch in latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct QBatch {
    pub z: Array2<f64>,
    pub actions: Vec<usize>,
    pub z_next: Array2<f64>,
    pub z_goal: Array2<f64>,
    pub rewards: Array1<f64>,
}

/// `-|z_next - z_goal|`.
pub fn latent_reward(z_next: &[f64], z_goal: &[f64]) -> f64 {
    -z_next.iter().zip(z_goal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub online: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    /// Hard target copy every this many updates.
    pub sync_period: u64,
    pub updates: u64,
}

fn joint_input(z: &Array2<f64>, zg: &Array2<f64>) -> Result<Array2<f64>> {
    if z.dim() != zg.dim() {
        return Err(Error::Shape("state and goal latents differ in shape".into()));
    }
    Ok(concatenate![Axis(1), z.view(), zg.view()])
}

/// Mean squared TD error and its gradient for the online network.
pub fn td_loss(online: &Mlp, target: &Mlp, batch: &QBatch, gamma: f64) -> Result<(f64, MlpGrads)> {
    let b = batch.actions.len();
    if b == 0 {
        return Err(Error::Empty("Q batch"));
    }
    if batch.z.nrows() != b || batch.z_next.nrows() != b || batch.z_goal.nrows() != b || batch.rewards.len() != b {
        return Err(Error::Shape("Q batch fields disagree in length".into()));
    }
    let next_q = target.predict(&joint_input(&batch.z_next, &batch.z_goal)?)?;
    let cache = online.forward(&joint_input(&batch.z, &batch.z_goal)?)?;
    let q = cache.output();
    let mut grad_out = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    for i in 0..b {
        let a = batch.actions[i];
        if a >= q.ncols() {
            return Err(Error::Shape(format!("action {a} out of range")));
        }
        let max_next = next_q.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y = batch.rewards[i] + gamma * max_next;
        let err = q[[i, a]] - y;
        loss += err * err / b as f64;
        grad_out[[i, a]] = 2.0 * err / b as f64;
    }
    let (grads, _) = online.backward(&cache, &grad_out)?;
    Ok((loss, grads))
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        adam: AdamConfig,
        sync_period: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![2 * latent_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        let online = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(QNetwork {
            target: online.clone(),
            adam: AdamState::new(&online, adam),
            online,
            sync_period: sync_period.max(1),
            updates: 0,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, z: &Array2<f64>, zg: &Array2<f64>) -> Result<Array2<f64>> {
        self.online.predict(&joint_input(z, zg)?)
    }

    /// ε-greedy action for a single latent state and goal.
    pub fn act<R: Rng + ?Sized>(&self, z: &[f64], zg: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.n_actions()));
        }
        let zr = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let gr = Array2::from_shape_vec((1, zg.len()), zg.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        let q = self.q_values(&zr, &gr)?;
        Ok(greedy(q.row(0).as_slice().expect("contiguous")))
    }

    /// One Adam step on the TD loss; returns the loss before the step.
    pub fn update(&mut self, batch: &QBatch, gamma: f64) -> Result<f64> {
        let (loss, grads) = td_loss(&self.online, &self.target, batch, gamma)?;
        adam_step(&mut self.online, &grads, &mut self.adam)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.sync_period) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn qnet(seed: u64, sync: u64) -> QNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QNetwork::new(2, &[16, 16], 3, AdamConfig::with_lr(1e-2), sync, &mut rng).unwrap()
    }

    #[test]
    fn rewards() {
        assert_eq!(latent_reward(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(latent_reward(&[0.0, 0.0], &[3.0, 4.0]), -5.0);
    }

    #[test]
    fn zero_network_zero_reward_is_a_fixed_point() {
        let mut q = qnet(0, 1);
        let z = vec![0.0; q.online.num_params()];
        q.online.set_params_flat(&z).unwrap();
        q.target = q.online.clone();
        let batch = QBatch {
            z: array![[0.3, 0.1]],
            actions: vec![1],
            z_next: array![[0.2, 0.0]],
            z_goal: array![[1.0, 1.0]],
            rewards: array![0.0],
        };
        let loss = q.update(&batch, 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert!(q.online.params_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_transition_reaches_bellman_target() {
        let mut q = qnet(1, 1);
        let batch = QBatch {
            z: array![[0.5, -0.5]],
            actions: vec![2],
            z_next: array![[0.1, 0.4]],
            z_goal: array![[0.0, 1.0]],
            rewards: array![-0.7],
        };
        for _ in 0..3000 {
            q.update(&batch, 0.9).unwrap();
        }
        let qa = q.q_values(&batch.z, &batch.z_goal).unwrap()[[0, 2]];
        let next = q.target.predict(&joint_input(&batch.z_next, &batch.z_goal).unwrap()).unwrap();
        let y = -0.7 + 0.9 * next.row(0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((qa - y).abs() < 1e-3, "{qa} vs {y}");
    }

    #[test]
    fn td_gradient_matches_finite_differences() {
        let q = qnet(2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = |r, c| Array2::from_shape_fn((r, c), |_| StandardNormal.sample(&mut rng));
        let batch = QBatch { z: m(6, 2), actions: vec![0, 1, 2, 0, 1, 2], z_next: m(6, 2), z_goal: m(6, 2), rewards: Array1::from_elem(6, -0.3) };
        let target = {
            let mut t = q.online.clone();
            let p: Vec<f64> = t.params_flat().iter().map(|v| v * 0.9).collect();
            t.set_params_flat(&p).unwrap();
            t
        };
        let (_, g) = td_loss(&q.online, &target, &batch, 0.9).unwrap();
        let base = q.online.clone();
        let loss = |p: &[f64]| {
            let mut o = base.clone();
            o.set_params_flat(p)?;
            Ok(td_loss(&o, &target, &batch, 0.9)?.0)
        };
        let input = joint_input(&batch.z, &batch.z_goal).unwrap();
        let kink = |p: &[f64]| {
            let mut o = base.clone();
            o.set_params_flat(p)?;
            Ok(o.forward(&input)?.relu_pattern())
        };
        let opts = GradCheckOptions { max_coords: None, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep = grad_check(loss, &q.online.params_flat(), &g.to_flat(), opts, Some(&kink), &mut rng).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn greedy_and_ties() {
        assert_eq!(greedy(&[0.1, 0.5, 0.2]), 1);
        assert_eq!(greedy(&[0.0, 0.0, 0.0]), 0);
        let mut q = qnet(5, 1);
        let z = vec![0.0; q.online.num_params()];
        q.online.set_params_flat(&z).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(q.act(&[0.1, 0.2], &[0.3, 0.4], 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = qnet(6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[q.act(&[0.0, 0.0], &[1.0, 1.0], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }
}
