use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub rtol: f64,
    /// Absolute floor so coordinates whose true gradient is zero do not fail
    /// on rounding noise.
    pub atol: f64,
    /// Number of coordinates to probe; `None` checks all of them.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, rtol: 1e-4, atol: 1e-8, max_coords: Some(64) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because the probe crossed a non-differentiable
    /// point (see [`grad_check`]'s `kink` argument).
    pub skipped: usize,
    pub failures: Vec<usize>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Signature of the piecewise-smooth region containing a parameter vector.
pub type KinkProbe<'a> = &'a dyn Fn(&[f64]) -> Result<Vec<bool>>;

/// Compares `analytic` against central differences of `loss` around
/// `params` on a random subset of coordinates.
///
/// A coordinate fails when `|num - ana| > rtol * max(|num|, |ana|) + atol`.
/// When `kink` is given it must return a signature of the piecewise-smooth
/// region containing a parameter vector; probes whose `θ ± h` signatures
/// differ are skipped rather than compared.
pub fn grad_check<R, F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    opts: GradCheckOptions,
    kink: Option<KinkProbe>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let n = params.len();
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < n => {
            let mut c = sample(rng, n, k).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..n).collect(),
    };
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        failures: Vec::new(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    let mut theta = params.to_vec();
    for i in coords {
        let orig = theta[i];
        theta[i] = orig + opts.h;
        let up = loss(&theta)?;
        let sig_up = kink.map(|k| k(&theta)).transpose()?;
        theta[i] = orig - opts.h;
        let down = loss(&theta)?;
        let sig_down = kink.map(|k| k(&theta)).transpose()?;
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        if sig_up != sig_down {
            report.skipped += 1;
            continue;
        }
        let num = (up - down) / (2.0 * opts.h);
        let ana = analytic[i];
        let abs = (num - ana).abs();
        let scale = num.abs().max(ana.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(abs);
        if abs > opts.atol {
            report.max_rel_err = report.max_rel_err.max(rel);
        }
        if abs > opts.rtol * scale + opts.atol {
            report.failures.push(i);
        }
    }
    Ok(report)
}
