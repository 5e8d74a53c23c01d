use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::gbmdp::GbmdpFamily;
use crate::vae::Encoder;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub env: usize,
    pub state: usize,
    pub latent: Array1<f64>,
    pub projection: [f64; 2],
}

/// Projects rows of `z` onto the top two principal axes of their covariance.
/// Axis signs are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(z: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, d) = z.dim();
    if n == 0 {
        return Err(Error::Empty("latent rows"));
    }
    let mean = z.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = z - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Array2::zeros((n, 2));
    for (k, &axis) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(axis);
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[[i, k]] = sign * (0..d).map(|j| centered[[i, j]] * v[j]).sum::<f64>();
        }
    }
    Ok(out)
}

/// One row per (env, state) over `envs`, observing each env at its initial
/// factor.
pub fn latent_table<E: Encoder + ?Sized>(enc: &E, family: &GbmdpFamily, envs: &[usize]) -> Result<Vec<LatentRow>> {
    let n = family.n_states();
    let mut obs = Array2::zeros((envs.len() * n, family.obs_dim));
    for (i, &e) in envs.iter().enumerate() {
        let env = family.env(e)?;
        for s in 0..n {
            obs.row_mut(i * n + s).assign(&env.observe(s, &env.factor0));
        }
    }
    let z = enc.embed(&obs)?;
    let proj = pca_2d(&z)?;
    let mut rows = Vec::with_capacity(obs.nrows());
    for (i, &e) in envs.iter().enumerate() {
        for s in 0..n {
            let r = i * n + s;
            rows.push(LatentRow { env: e, state: s, latent: z.row(r).to_owned(), projection: [proj[[r, 0]], proj[[r, 1]]] });
        }
    }
    Ok(rows)
}

/// CSV with columns `env,state,z0..z{d-1},pc1,pc2`.
pub fn write_csv(rows: &[LatentRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = rows.first().map_or(0, |r| r.latent.len());
    let header: Vec<String> = ["env".to_string(), "state".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("z{j}")))
        .chain(["pc1".to_string(), "pc2".to_string()])
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.env.to_string(), r.state.to_string()];
        fields.extend(r.latent.iter().map(|v| v.to_string()));
        fields.extend(r.projection.iter().map(|v| v.to_string()));
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    Ok(())
}
