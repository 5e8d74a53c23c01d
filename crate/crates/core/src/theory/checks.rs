//! Exact checks of the generalization inequalities on finite instances.
//! Every report carries both sides so callers can print slack.

use serde::{Deserialize, Serialize};

use super::finite::{
    avg_tv, d_pidpi, joint_occupancy, objective, occupancy, tv, FiniteGbmdp, JointDist, PolicyClass, TabularPolicy,
};
use crate::error::{Error, Result};

pub const TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Inequality { lhs, rhs, holds: lhs <= rhs + TOL }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

fn horizon(gamma: f64) -> f64 {
    gamma / (1.0 - gamma)
}

/// `|J^e(π₁) − J^e(π₂)| ≤ 2γ/(1−γ) · ε^{ρ_{π₁}}(π₁ ‖ π₂)`.
pub fn check_performance_difference(fg: &FiniteGbmdp, e: usize, p1: &TabularPolicy, p2: &TabularPolicy) -> Result<Inequality> {
    let lhs = (objective(fg, p1, e)? - objective(fg, p2, e)?).abs();
    let eps = avg_tv(&joint_occupancy(fg, p1, e)?, p1, p2)?;
    Ok(Inequality::new(lhs, 2.0 * horizon(fg.gamma) * eps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyShift {
    /// `ε = max_{s,g} D_TV(π(·|s,g) ‖ π'(·|s,g))`.
    pub max_policy_tv: f64,
    /// TV between the joint `(s, g)` occupancies.
    pub joint: Inequality,
    /// Largest TV between the goal-conditioned occupancies; bounded by the same quantity.
    pub worst_goal: Inequality,
}

impl OccupancyShift {
    pub fn holds(&self) -> bool {
        self.joint.holds && self.worst_goal.holds
    }
}

/// Occupancy shift is at most `γ ε / (1−γ)`.
pub fn check_occupancy_shift(fg: &FiniteGbmdp, e: usize, p1: &TabularPolicy, p2: &TabularPolicy) -> Result<OccupancyShift> {
    let mut eps = 0.0f64;
    for s in 0..fg.n_states {
        for gi in 0..fg.n_goals() {
            eps = eps.max(tv(p1.row(e, s, gi), p2.row(e, s, gi)));
        }
    }
    let bound = horizon(fg.gamma) * eps;
    let ng = fg.n_goals() as f64;
    let mut joint = 0.0;
    let mut worst = 0.0f64;
    for gi in 0..fg.n_goals() {
        let d = tv(&occupancy(fg, p1, e, gi)?, &occupancy(fg, p2, e, gi)?);
        joint += d / ng;
        worst = worst.max(d);
    }
    Ok(OccupancyShift { max_policy_tv: eps, joint: Inequality::new(joint, bound), worst_goal: Inequality::new(worst, bound) })
}

/// How `λ`'s reference policy is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaVariant {
    /// `π* = argmin Σ_i ε^{e_i}(π' ‖ π_G)` over training environments.
    #[default]
    TrainArgmin,
    /// `π* = argmin (1/N) Σ_i ε^{e_i}(π' ‖ π_G) + ε^t(π' ‖ π_G)`.
    JointArgmin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub lambda: LambdaVariant,
    /// Multiplies the bound before comparison; values below 1 inject faults.
    pub bound_scale: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions { lambda: LambdaVariant::TrainArgmin, bound_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub gap: f64,
    pub bound: f64,
    pub train_error: f64,
    pub lambda: f64,
    pub delta: f64,
    pub target_divergence: f64,
    /// Index of `π*` in the class.
    pub reference: usize,
    pub holds: bool,
}

/// Target-environment gap of `π` against the bound built from training
/// environments. The minimum over the characteristic set is replaced by the
/// first training occupancy, which belongs to it by construction of `δ`.
pub fn check_generalization_bound(
    fg: &FiniteGbmdp,
    class: &PolicyClass,
    pi: &TabularPolicy,
    pi_g: &TabularPolicy,
    train: &[usize],
    target: usize,
    opts: BoundOptions,
) -> Result<GeneralizationReport> {
    if train.is_empty() {
        return Err(Error::Empty("training environment list"));
    }
    if train.iter().chain(std::iter::once(&target)).any(|&e| e >= fg.n_envs) {
        return Err(Error::UnknownEnv(target.max(*train.iter().max().unwrap_or(&0))));
    }
    let n = train.len() as f64;
    let rho_train: Vec<JointDist> = train.iter().map(|&e| joint_occupancy(fg, pi, e)).collect::<Result<_>>()?;
    let rho_target = joint_occupancy(fg, pi_g, target)?;

    let mut train_error = 0.0;
    for r in &rho_train {
        train_error += avg_tv(r, pi, pi_g)? / n;
    }

    let mut best: Option<(usize, f64, f64)> = None;
    for (k, cand) in class.policies().iter().enumerate() {
        let mut train_sum = 0.0;
        for r in &rho_train {
            train_sum += avg_tv(r, cand, pi_g)?;
        }
        let target_err = avg_tv(&rho_target, cand, pi_g)?;
        let score = match opts.lambda {
            LambdaVariant::TrainArgmin => train_sum,
            LambdaVariant::JointArgmin => train_sum / n + target_err,
        };
        if best.is_none_or(|(_, s, _)| score < s) {
            best = Some((k, score, train_sum / n + target_err));
        }
    }
    let (reference, _, lambda) = best.ok_or(Error::Empty("policy class"))?;

    let mut delta = 0.0f64;
    for a in &rho_train {
        for b in &rho_train {
            delta = delta.max(d_pidpi(a, b, class)?);
        }
    }
    let target_divergence = d_pidpi(&rho_train[0], &rho_target, class)?;

    let gap = objective(fg, pi_g, target)? - objective(fg, pi, target)?;
    let bound = opts.bound_scale * 2.0 * horizon(fg.gamma) * (train_error + lambda + delta + target_divergence);
    Ok(GeneralizationReport { gap, bound, train_error, lambda, delta, target_divergence, reference, holds: gap <= bound + TOL })
}

/// Latent codes `Φ(x^e(s))` for every training environment and state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTable {
    pub n_envs: usize,
    pub n_states: usize,
    /// `rows[e * n_states + s]`.
    pub rows: Vec<Vec<f64>>,
}

impl LatentTable {
    pub fn new(n_envs: usize, n_states: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != n_envs * n_states {
            return Err(Error::Shape(format!("latent table has {} rows, expected {}", rows.len(), n_envs * n_states)));
        }
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("latent rows must share a positive width".into()));
        }
        Ok(LatentTable { n_envs, n_states, rows })
    }

    pub fn get(&self, e: usize, s: usize) -> &[f64] {
        &self.rows[e * self.n_states + s]
    }

    /// `η̂ = max_{s, e, e'} ‖Φ(x^e(s)) − Φ(x^{e'}(s))‖`.
    pub fn eta(&self) -> f64 {
        let mut best = 0.0f64;
        for s in 0..self.n_states {
            for e in 0..self.n_envs {
                for e2 in 0..self.n_envs {
                    best = best.max(dist(self.get(e, s), self.get(e2, s)));
                }
            }
        }
        best
    }

    /// `ψ̂ = min_{s ≠ s', e, e'} ‖Φ(x^e(s)) − Φ(x^{e'}(s'))‖ / ‖s − s'‖`.
    pub fn psi(&self, fg: &FiniteGbmdp) -> f64 {
        let mut best = f64::INFINITY;
        for s in 0..self.n_states {
            for s2 in 0..self.n_states {
                if s == s2 {
                    continue;
                }
                let ds = fg.state_distance(s, s2);
                for e in 0..self.n_envs {
                    for e2 in 0..self.n_envs {
                        best = best.min(dist(self.get(e, s), self.get(e2, s2)) / ds);
                    }
                }
            }
        }
        if best.is_finite() { best } else { 0.0 }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Head `w(z, g) = (1 − c) u₁ + c u₂` with `c = clamp(c₀ + L⟨v, z⟩, 0, 1)`
/// and `‖v‖ ≤ 1`, hence `L`-Lipschitz from latents to TV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixHead {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub c0: f64,
    pub v: Vec<f64>,
}

impl MixHead {
    pub fn eval(&self, z: &[f64], lipschitz: f64) -> Vec<f64> {
        let dot: f64 = self.v.iter().zip(z).map(|(a, b)| a * b).sum();
        let c = (self.c0 + lipschitz * dot).clamp(0.0, 1.0);
        self.u1.iter().zip(&self.u2).map(|(a, b)| (1.0 - c) * a + c * b).collect()
    }
}

/// The policy `π(·|x^e(s), g) = w(Φ(x^e(s)), g)` on the training environments.
pub fn compose(fg: &FiniteGbmdp, table: &LatentTable, mut w: impl FnMut(&[f64], usize) -> Vec<f64>) -> Result<TabularPolicy> {
    if table.n_envs != fg.n_envs || table.n_states != fg.n_states {
        return Err(Error::Shape("latent table does not cover the instance".into()));
    }
    TabularPolicy::from_fn(fg, false, |e, s, gi| w(table.get(e, s), gi))
}

/// Largest `D_TV(π(x^e(s), g) ‖ π(x^{e'}(s'), g)) / ‖z − z'‖` over latent pairs.
fn lipschitz_ratio(fg: &FiniteGbmdp, table: &LatentTable, pi: &TabularPolicy) -> f64 {
    let mut worst = 0.0f64;
    let cells: Vec<(usize, usize)> = (0..fg.n_envs).flat_map(|e| (0..fg.n_states).map(move |s| (e, s))).collect();
    for &(e, s) in &cells {
        for &(e2, s2) in &cells {
            let dz = dist(table.get(e, s), table.get(e2, s2));
            for gi in 0..fg.n_goals() {
                let d = tv(pi.row(e, s, gi), pi.row(e2, s2, gi));
                if dz > 0.0 {
                    worst = worst.max(d / dz);
                } else if d > TOL {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub eta: f64,
    pub psi: f64,
    pub lipschitz: f64,
    /// Largest Lipschitz ratio observed across the subclass.
    pub subclass_lipschitz: f64,
    /// Smoothness `u` the optimal policy needs, against `L ψ̂`.
    pub required_smoothness: f64,
    pub smoothness_holds: bool,
    /// `max_{π, e, e'} d(ρ^e_π, ρ^{e'}_π) ≤ (2 + γ/(1−γ)) η̂ L`.
    pub divergence_bound: Inequality,
    /// `(1/N) Σ_i ε^{e_i}(π̃ ‖ π_G) ≤ η̂ L`, absent when `ψ̂ = 0`.
    pub reference_bound: Option<Inequality>,
    /// `ψ̂ = 0`: distinct states share a latent, so `π̃` is not defined.
    pub degenerate: bool,
}

impl AlignmentReport {
    pub fn holds(&self) -> bool {
        self.divergence_bound.holds && self.reference_bound.is_some_and(|s| s.holds) && !self.degenerate
    }
}

/// Checks the two intermediate statements behind the aligned-encoder bound,
/// with `Π_sub` the policies obtained by composing `heads` with the table.
pub fn check_aligned_representation(
    fg: &FiniteGbmdp,
    table: &LatentTable,
    lipschitz: f64,
    heads: &[Vec<MixHead>],
    pi_g: &TabularPolicy,
) -> Result<AlignmentReport> {
    if heads.is_empty() {
        return Err(Error::Empty("head list"));
    }
    let d = table.rows[0].len();
    for per_goal in heads {
        if per_goal.len() != fg.n_goals() {
            return Err(Error::Shape("each head needs one mixture per goal".into()));
        }
        for h in per_goal {
            if h.v.len() != d || h.u1.len() != fg.n_actions || h.u2.len() != fg.n_actions {
                return Err(Error::Shape("head dimensions do not match the table or action set".into()));
            }
            if h.v.iter().map(|x| x * x).sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::Invalid("head direction must have norm at most 1".into()));
            }
        }
    }
    let eta = table.eta();
    let psi = table.psi(fg);

    let sub: Vec<TabularPolicy> = heads
        .iter()
        .map(|per_goal| compose(fg, table, |z, gi| per_goal[gi].eval(z, lipschitz)))
        .collect::<Result<_>>()?;
    let subclass_lipschitz = sub.iter().map(|p| lipschitz_ratio(fg, table, p)).fold(0.0, f64::max);
    let class = PolicyClass::new(sub)?;

    let mut s1 = 0.0f64;
    for pi in class.policies() {
        let rhos: Vec<JointDist> = (0..fg.n_envs).map(|e| joint_occupancy(fg, pi, e)).collect::<Result<_>>()?;
        for a in &rhos {
            for b in &rhos {
                s1 = s1.max(d_pidpi(a, b, &class)?);
            }
        }
    }
    let divergence_bound = Inequality::new(s1, (2.0 + horizon(fg.gamma)) * eta * lipschitz);

    let mut required = 0.0f64;
    for s in 0..fg.n_states {
        for s2 in 0..fg.n_states {
            if s != s2 {
                for gi in 0..fg.n_goals() {
                    required = required.max(tv(pi_g.row(0, s, gi), pi_g.row(0, s2, gi)) / fg.state_distance(s, s2));
                }
            }
        }
    }

    let degenerate = psi <= 0.0;
    let reference_bound = if degenerate {
        None
    } else {
        // s(z): first (env, state) whose latent equals z.
        let owner = |z: &[f64]| -> usize {
            for e in 0..fg.n_envs {
                for s in 0..fg.n_states {
                    if table.get(e, s) == z {
                        return s;
                    }
                }
            }
            unreachable!("every latent comes from the table")
        };
        let tilde = compose(fg, table, |z, gi| pi_g.row(0, owner(z), gi).to_vec())?;
        let mut lhs = 0.0;
        for e in 0..fg.n_envs {
            lhs += avg_tv(&joint_occupancy(fg, &tilde, e)?, &tilde, pi_g)? / fg.n_envs as f64;
        }
        Some(Inequality::new(lhs, eta * lipschitz))
    };

    Ok(AlignmentReport {
        eta,
        psi,
        lipschitz,
        subclass_lipschitz,
        required_smoothness: required,
        smoothness_holds: required <= lipschitz * psi + TOL,
        divergence_bound,
        reference_bound,
        degenerate,
    })
}
