use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::checks::{
    check_performance_difference, check_occupancy_shift, check_generalization_bound, check_aligned_representation, Inequality, LambdaVariant, LatentTable, MixHead,
    BoundOptions,
};
use super::finite::{optimal_invariant_policy, PolicyClass};
use super::random::{random_instance, random_policy, simplex, InstanceSpec};
use crate::error::Result;
use crate::losses::{cross_pair_inequality, mmd_chain_check, RandomExpansion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub performance_difference_instances: usize,
    pub occupancy_shift_instances: usize,
    pub cross_pair_instances: usize,
    pub generalization_families: usize,
    pub generalization_max_class: usize,
    pub alignment_instances: usize,
    pub alignment_eta: f64,
    pub alignment_lipschitz: f64,
    pub mmd_batches: usize,
    pub mmd_batch_size: usize,
    pub lambda: LambdaVariant,
    /// Multiplies every right-hand side; below 1 deliberately breaks checks.
    pub fault_scale: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            performance_difference_instances: 100,
            occupancy_shift_instances: 100,
            cross_pair_instances: 50,
            generalization_families: 50,
            generalization_max_class: 16,
            alignment_instances: 20,
            alignment_eta: 0.1,
            alignment_lipschitz: 2.0,
            mmd_batches: 1000,
            mmd_batch_size: 32,
            lambda: LambdaVariant::TrainArgmin,
            fault_scale: 1.0,
        }
    }
}

/// One verified inequality `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub instance: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub records: Vec<CheckRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: String,
    pub count: usize,
    pub failures: usize,
    pub min_slack: f64,
}

impl SuiteReport {
    fn push(&mut self, check: &str, instance: usize, lhs: f64, rhs: f64, holds: bool) {
        self.records.push(CheckRecord { check: check.into(), instance, lhs, rhs, slack: rhs - lhs, holds });
    }

    fn push_scaled(&mut self, check: &str, instance: usize, ineq: Inequality, scale: f64) {
        let scaled = Inequality::new(ineq.lhs, ineq.rhs * scale);
        self.push(check, instance, scaled.lhs, scaled.rhs, scaled.holds);
    }

    pub fn all_hold(&self) -> bool {
        self.records.iter().all(|r| r.holds)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.holds)
    }

    /// Per-check counts in first-seen order.
    pub fn summary(&self) -> Vec<CheckSummary> {
        let mut out: Vec<CheckSummary> = Vec::new();
        for r in &self.records {
            let idx = match out.iter().position(|s| s.check == r.check) {
                Some(i) => i,
                None => {
                    out.push(CheckSummary { check: r.check.clone(), count: 0, failures: 0, min_slack: f64::INFINITY });
                    out.len() - 1
                }
            };
            let s = &mut out[idx];
            s.count += 1;
            s.failures += usize::from(!r.holds);
            s.min_slack = s.min_slack.min(r.slack);
        }
        out
    }
}

/// Runs every randomized and fixed check. Deterministic in `config.seed`.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    let scale = config.fault_scale;
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k);
        rng
    };

    let mut rng = stream(1);
    for i in 0..config.performance_difference_instances {
        let fg = random_instance(&InstanceSpec::default(), &mut rng)?;
        let det = rng.random_bool(0.5);
        let a = random_policy(&fg, true, det, &mut rng)?;
        let b = random_policy(&fg, true, det, &mut rng)?;
        report.push_scaled("performance_difference", i, check_performance_difference(&fg, 0, &a, &b)?, scale);
    }

    let mut rng = stream(2);
    for i in 0..config.occupancy_shift_instances {
        let fg = random_instance(&InstanceSpec::default(), &mut rng)?;
        let a = random_policy(&fg, true, false, &mut rng)?;
        let b = random_policy(&fg, true, false, &mut rng)?;
        let r = check_occupancy_shift(&fg, 0, &a, &b)?;
        report.push_scaled("occupancy_shift", i, r.joint, scale);
        report.push_scaled("occupancy_shift_per_goal", i, r.worst_goal, scale);
    }

    let mut rng = stream(3);
    for i in 0..config.cross_pair_instances {
        let k = rng.random_range(1..=6);
        let d = rng.random_range(1..=4);
        let p = simplex(k, &mut rng);
        let mut vecs = || (0..k).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect::<Vec<Vec<f64>>>();
        let (f, g) = (vecs(), vecs());
        let r = cross_pair_inequality(&p, &f, &g)?;
        // lower bound: 0.5 Σ p ‖f − g‖² ≤ Σ p p' ‖f − g'‖²
        let rhs = r.lhs * scale;
        report.push("cross_pair", i, r.rhs, rhs, r.rhs <= rhs + 1e-12);
    }

    let mut rng = stream(4);
    let spec = InstanceSpec { states: vec![3], envs: 3, ..Default::default() };
    for i in 0..config.generalization_families {
        let fg = random_instance(&spec, &mut rng)?;
        let pi_g = optimal_invariant_policy(&fg)?;
        let size = rng.random_range(2..=config.generalization_max_class.max(2));
        let mut pols = Vec::with_capacity(size);
        if rng.random_bool(0.5) {
            pols.push(pi_g.clone());
        }
        while pols.len() < size {
            let det = rng.random_bool(0.5);
            pols.push(random_policy(&fg, false, det, &mut rng)?);
        }
        let class = PolicyClass::new(pols)?;
        let opts = BoundOptions { lambda: config.lambda, bound_scale: scale };
        for pi in class.policies() {
            let r = check_generalization_bound(&fg, &class, pi, &pi_g, &[0, 1], 2, opts)?;
            report.push("generalization_bound", i, r.gap, r.bound, r.holds);
        }
    }

    let mut rng = stream(5);
    for i in 0..config.alignment_instances {
        let spec = InstanceSpec { states: vec![3], envs: 2, ..Default::default() };
        let fg = random_instance(&spec, &mut rng)?;
        let pi_g = optimal_invariant_policy(&fg)?;
        let base: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let exact = LatentTable::new(2, 3, [base.clone(), base.clone()].concat())?;
        let mut shifted = base.clone();
        for (s, row) in shifted.iter_mut().enumerate() {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            // the first state sits exactly at the target misalignment
            let r = if s == 0 { config.alignment_eta } else { rng.random_range(0.0..config.alignment_eta) };
            row[0] += r * angle.cos();
            row[1] += r * angle.sin();
        }
        let perturbed = LatentTable::new(2, 3, [base, shifted].concat())?;
        let heads: Vec<Vec<MixHead>> = (0..4)
            .map(|_| {
                (0..fg.n_goals())
                    .map(|_| {
                        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        let norm: f64 = rng.random_range(0.0..=1.0);
                        MixHead {
                            u1: simplex(2, &mut rng),
                            u2: simplex(2, &mut rng),
                            c0: rng.random_range(0.0..=1.0),
                            v: vec![norm * theta.cos(), norm * theta.sin()],
                        }
                    })
                    .collect()
            })
            .collect();
        for (label, table) in [("exact", &exact), ("perturbed", &perturbed)] {
            let r = check_aligned_representation(&fg, table, config.alignment_lipschitz, &heads, &pi_g)?;
            report.push_scaled(&format!("aligned_divergence_{label}"), i, r.divergence_bound, scale);
            match r.reference_bound {
                Some(s2) => report.push_scaled(&format!("aligned_reference_{label}"), i, s2, scale),
                None => report.push(&format!("aligned_reference_{label}"), i, f64::NAN, f64::NAN, false),
            }
            let lip = Inequality::new(r.subclass_lipschitz, r.lipschitz);
            report.push_scaled(&format!("head_lipschitz_{label}"), i, lip, scale);
        }
    }

    if config.mmd_batches >= 2 {
        let mut rng = stream(6);
        let (dim, states) = (4, 10);
        let exp = RandomExpansion::new(dim, 64, 1.0, &mut rng)?;
        let centers = Array2::<f64>::from_shape_fn((states, dim), |_| StandardNormal.sample(&mut rng));
        let b = config.mmd_batch_size.max(1);
        let mut pairs = Vec::with_capacity(config.mmd_batches);
        for _ in 0..config.mmd_batches {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..states)).collect();
            let mut batch = |noise: f64| {
                Array2::from_shape_fn((b, dim), |(r, c)| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    centers[[idx[r], c]] + noise * n
                })
            };
            let za = batch(0.3);
            let zb = batch(0.3);
            pairs.push((za, zb));
        }
        let r = mmd_chain_check(&exp, pairs)?;
        // bound ≤ mmd, up to three standard errors of Monte Carlo noise
        let rhs = r.mean_mmd * scale + 3.0 * r.std_err;
        report.push("mmd_lower_bound", 0, r.mean_bound, rhs, r.mean_bound <= rhs);
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig {
            performance_difference_instances: 10,
            occupancy_shift_instances: 10,
            cross_pair_instances: 10,
            generalization_families: 5,
            generalization_max_class: 6,
            alignment_instances: 3,
            mmd_batches: 50,
            ..Default::default()
        }
    }

    #[test]
    fn small_suite_holds_and_is_deterministic() {
        let a = run_suite(&small()).unwrap();
        assert!(a.all_hold(), "{:?}", a.failures().collect::<Vec<_>>());
        let b = run_suite(&small()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let names: Vec<String> = a.summary().into_iter().map(|s| s.check).collect();
        assert!(names.contains(&"generalization_bound".to_string()));
        assert!(names.contains(&"mmd_lower_bound".to_string()));
    }

    #[test]
    fn fault_injection_is_caught() {
        let r = run_suite(&SuiteConfig { fault_scale: 0.0, ..small() }).unwrap();
        assert!(!r.all_hold());
        let summary = r.summary();
        assert!(summary.iter().any(|s| s.check == "generalization_bound" && s.failures > 0));
        assert!(summary.iter().any(|s| s.check == "performance_difference" && s.failures > 0));
    }

    #[test]
    fn joint_lambda_variant_also_holds() {
        let r = run_suite(&SuiteConfig { lambda: LambdaVariant::JointArgmin, ..small() }).unwrap();
        assert!(r.all_hold());
    }
}
