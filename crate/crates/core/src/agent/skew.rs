use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized `w_i ∝ density_i^alpha` computed from log densities.
pub fn skewed_weights(log_density: &[f64], alpha: f64) -> Result<Vec<f64>> {
    skewed_weights_counted(log_density, &vec![1.0; log_density.len()], alpha)
}

/// Like [`skewed_weights`] for candidates standing in for `counts[i]`
/// identical buffer entries each.
pub fn skewed_weights_counted(log_density: &[f64], counts: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if log_density.is_empty() {
        return Err(Error::Empty("skew candidates"));
    }
    if counts.len() != log_density.len() {
        return Err(Error::Shape("one count per candidate required".into()));
    }
    if alpha > 0.0 {
        return Err(Error::Config(format!("skew exponent {alpha} must be <= 0")));
    }
    let logw: Vec<f64> = log_density.iter().zip(counts).map(|(&l, &c)| c.ln() + alpha * l).collect();
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Gaussian kernel density over a weighted reference set of latents.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKde {
    reference: Array2<f64>,
    log_weights: Vec<f64>,
    pub bandwidth: f64,
}

impl GaussianKde {
    /// Scott's rule: `h = σ̄ n^{-1/(d+4)}`, with `σ̄` the mean per-coordinate
    /// standard deviation and `n` the total weight.
    pub fn scott(reference: Array2<f64>, weights: &[f64]) -> Result<Self> {
        let n = reference.nrows();
        if n == 0 {
            return Err(Error::Empty("density reference set"));
        }
        if weights.len() != n || weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(Error::Invalid("density weights must be positive, one per row".into()));
        }
        let total: f64 = weights.iter().sum();
        let d = reference.ncols();
        let mut mean = vec![0.0; d];
        for (row, &w) in reference.axis_iter(Axis(0)).zip(weights) {
            for k in 0..d {
                mean[k] += w * row[k] / total;
            }
        }
        let mut var = vec![0.0; d];
        for (row, &w) in reference.axis_iter(Axis(0)).zip(weights) {
            for k in 0..d {
                var[k] += w * (row[k] - mean[k]).powi(2) / total;
            }
        }
        let sigma = var.iter().map(|v| v.sqrt()).sum::<f64>() / d.max(1) as f64;
        let bandwidth = (sigma * total.powf(-1.0 / (d as f64 + 4.0))).max(1e-6);
        let log_weights = weights.iter().map(|w| (w / total).ln()).collect();
        Ok(GaussianKde { reference, log_weights, bandwidth })
    }

    pub fn log_density(&self, z: &Array2<f64>) -> Vec<f64> {
        let d = self.reference.ncols() as f64;
        let h2 = self.bandwidth * self.bandwidth;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * h2).ln();
        z.axis_iter(Axis(0))
            .map(|q| {
                let terms: Vec<f64> = self
                    .reference
                    .axis_iter(Axis(0))
                    .zip(&self.log_weights)
                    .map(|(r, lw)| {
                        let d2: f64 = q.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
                        lw - d2 / (2.0 * h2)
                    })
                    .collect();
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                norm + m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            })
            .collect()
    }
}

/// Skewed sampling distribution over a set of observation ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewTable {
    pub ids: Vec<u32>,
    pub weights: Vec<f64>,
}

impl SkewTable {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        Ok(self.ids[sample_index(&self.weights, rng)?])
    }
}

/// Categorical draw from normalized weights.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    if weights.len() == 1 {
        return Ok(0);
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}
