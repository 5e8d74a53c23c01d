use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiplies `grad` in place by the activation derivative, given the
    /// pre-activation `z` and the post-activation `a`.
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Tanh => Zip::from(grad).and(a).for_each(|g, &a| *g *= 1.0 - a * a),
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

/// One dense layer: `activation(x · weight + bias)`, weight is `in x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    /// Bumped on every parameter mutation; forward caches remember it.
    #[serde(skip)]
    version: u64,
}

/// Intermediate values kept by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    /// Sign pattern of every pre-activation; changes exactly when a ReLU kink
    /// is crossed.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|z| z.iter().map(|&v| v > 0.0)).collect()
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }

    /// Flattened in the same order as [`Mlp::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` includes input and output
    /// widths; hidden layers use `hidden`, the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, hidden, output)?;
        for layer in &mut mlp.layers {
            let (fan_in, fan_out) = layer.weight.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            layer.weight.mapv_inplace(|_| dist.sample(rng));
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Ok(Mlp { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.ncols() != pair[1].weight.nrows() {
                return Err(Error::Shape("inconsistent layer shape chain".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weight.ncols()) {
            return Err(Error::Shape("bias length differs from layer width".into()));
        }
        Ok(Mlp { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access bumps the version, invalidating outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version = self.version.wrapping_add(1);
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.ncols()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in self.layers_mut() {
            for w in l.weight.iter_mut() {
                *w = flat[off];
                off += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &Array2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let z = x.dot(&l.weight) + &l.bias;
            let a = l.activation.apply(&z);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardCache { inputs, pre, output: x, version: self.version })
    }

    /// Output only, without keeping intermediates.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut x = input.dot(&self.layers[0].weight) + &self.layers[0].bias;
        x = self.layers[0].activation.apply(&x);
        for l in &self.layers[1..] {
            let z = x.dot(&l.weight) + &l.bias;
            x = l.activation.apply(&z);
        }
        Ok(x)
    }

    /// Reverse pass. Returns parameter gradients and the gradient with respect
    /// to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Array2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.dim(),
                cache.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = grad_output.clone();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let post = if i + 1 == n { &cache.output } else { &cache.inputs[i + 1] };
            l.activation.backprop(&mut delta, &cache.pre[i], post);
            weights.push(cache.inputs[i].t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&l.weight.t());
        }
        weights.reverse();
        biases.reverse();
        Ok((MlpGrads { weights, biases }, delta))
    }
}
