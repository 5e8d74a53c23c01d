use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Moment accumulators shaped like the network they update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_w: Vec<Array2<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        let z = MlpGrads::zeros_like(mlp);
        AdamState {
            config,
            step: 0,
            m_w: z.weights.clone(),
            m_b: z.biases.clone(),
            v_w: z.weights,
            v_b: z.biases,
        }
    }

    fn matches(&self, g: &MlpGrads) -> bool {
        self.m_w.len() == g.weights.len()
            && self.m_w.iter().zip(&g.weights).all(|(a, b)| a.dim() == b.dim())
            && self.m_b.iter().zip(&g.biases).all(|(a, b)| a.dim() == b.dim())
    }
}

/// One bias-corrected Adam update of `mlp` with gradient `grads`.
pub fn adam_step(mlp: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if !state.matches(grads) || grads.weights.len() != mlp.layers().len() {
        return Err(Error::Shape("optimizer state does not match gradients".into()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    };
    for (i, layer) in mlp.layers_mut().iter_mut().enumerate() {
        Zip::from(&mut layer.weight)
            .and(&mut state.m_w[i])
            .and(&mut state.v_w[i])
            .and(&grads.weights[i])
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut state.m_b[i])
            .and(&mut state.v_b[i])
            .and(&grads.biases[i])
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut mlp = net();
        let before = mlp.params_flat();
        let mut st = AdamState::new(&mlp, AdamConfig::with_lr(1e-2));
        let zero = MlpGrads::zeros_like(&mlp);
        adam_step(&mut mlp, &zero, &mut st).unwrap();
        assert_eq!(before, mlp.params_flat());
    }

    #[test]
    fn first_step_is_a_sign_step_of_size_lr() {
        // Step 1: mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
        for g in [1e-3, 0.7, 250.0] {
            let mut mlp = net();
            let before = mlp.params_flat();
            let mut grads = MlpGrads::zeros_like(&mlp);
            grads.weights.iter_mut().for_each(|w| w.fill(g));
            grads.biases.iter_mut().for_each(|b| b.fill(-g));
            let lr = 0.01;
            let mut st = AdamState::new(&mlp, AdamConfig::with_lr(lr));
            adam_step(&mut mlp, &grads, &mut st).unwrap();
            let flat_g = grads.to_flat();
            for ((a, b), gi) in before.iter().zip(mlp.params_flat()).zip(flat_g) {
                let expected = lr * gi.abs() / (gi.abs() + 1e-8);
                assert!(((a - b).abs() - expected).abs() < 1e-15);
                assert_eq!((a - b).signum(), gi.signum());
            }
        }
    }

    #[test]
    fn identical_calls_identical_results() {
        let mut a = net();
        let mut b = net();
        let mut grads = MlpGrads::zeros_like(&a);
        grads.weights[0].fill(0.3);
        let mut sa = AdamState::new(&a, AdamConfig::with_lr(1e-3));
        let mut sb = sa.clone();
        for _ in 0..5 {
            adam_step(&mut a, &grads, &mut sa).unwrap();
            adam_step(&mut b, &grads, &mut sb).unwrap();
        }
        assert_eq!(a.params_flat(), b.params_flat());
        assert_eq!(sa, sb);
    }
}
