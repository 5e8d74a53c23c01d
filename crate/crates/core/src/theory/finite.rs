use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_STATES: usize = 12;
pub const MAX_ACTIONS: usize = 4;

/// A small GBMDP given explicitly. Environments share dynamics and differ
/// only in their observation of each state, so an environment is just an
/// index a policy may condition on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteGbmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_envs: usize,
    /// `p[(s * n_actions + a) * n_states + s2]` = P(s2 | s, a).
    pub p: Vec<f64>,
    pub rho0: Vec<f64>,
    pub goals: Vec<usize>,
    pub gamma: f64,
    /// Coordinates used as the state metric; defaults to the state index.
    pub coords: Vec<Vec<f64>>,
}

impl FiniteGbmdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_envs: usize,
        p: Vec<f64>,
        rho0: Vec<f64>,
        goals: Vec<usize>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_states > MAX_STATES {
            return Err(Error::Invalid(format!("|S| = {n_states} outside 1..={MAX_STATES}")));
        }
        if n_actions == 0 || n_actions > MAX_ACTIONS {
            return Err(Error::Invalid(format!("|A| = {n_actions} outside 1..={MAX_ACTIONS}")));
        }
        if n_envs == 0 {
            return Err(Error::Invalid("at least one environment is required".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!("gamma = {gamma} outside (0, 1)")));
        }
        if p.len() != n_states * n_actions * n_states || rho0.len() != n_states {
            return Err(Error::Shape("transition tensor or initial distribution has the wrong size".into()));
        }
        for row in p.chunks(n_states).chain(std::iter::once(rho0.as_slice())) {
            if row.iter().any(|&v| v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid("transition rows and initial distribution must be stochastic".into()));
            }
        }
        if goals.is_empty() {
            return Err(Error::Empty("goal set"));
        }
        if goals.iter().any(|&g| g >= n_states) {
            return Err(Error::Invalid("goal outside the state space".into()));
        }
        let coords = (0..n_states).map(|s| vec![s as f64]).collect();
        Ok(FiniteGbmdp { n_states, n_actions, n_envs, p, rho0, goals, gamma, coords })
    }

    pub fn n_goals(&self) -> usize {
        self.goals.len()
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn state_distance(&self, s: usize, t: usize) -> f64 {
        self.coords[s].iter().zip(&self.coords[t]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// Same instance with another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.n_envs, self.p.clone(), self.rho0.clone(), self.goals.clone(), gamma)
    }
}

/// `π(a | x^e(s), g)` as an explicit table. An invariant policy stores one
/// slice shared by every environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub invariant: bool,
    n_envs: usize,
    n_states: usize,
    n_goals: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Builds a policy from `f(e, s, goal_index) -> action distribution`.
    /// With `invariant`, `f` is called with `e = 0` only.
    pub fn from_fn(
        fg: &FiniteGbmdp,
        invariant: bool,
        mut f: impl FnMut(usize, usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let stored = if invariant { 1 } else { fg.n_envs };
        let mut probs = Vec::with_capacity(stored * fg.n_states * fg.n_goals() * fg.n_actions);
        for e in 0..stored {
            for s in 0..fg.n_states {
                for gi in 0..fg.n_goals() {
                    let row = f(e, s, gi);
                    if row.len() != fg.n_actions
                        || row.iter().any(|&v| v < -1e-15)
                        || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
                    {
                        return Err(Error::Invalid(format!("policy row (e={e}, s={s}, g={gi}) is not a distribution")));
                    }
                    probs.extend(row);
                }
            }
        }
        Ok(TabularPolicy { invariant, n_envs: fg.n_envs, n_states: fg.n_states, n_goals: fg.n_goals(), n_actions: fg.n_actions, probs })
    }

    pub fn deterministic(fg: &FiniteGbmdp, invariant: bool, mut choice: impl FnMut(usize, usize, usize) -> usize) -> Result<Self> {
        let n = fg.n_actions;
        Self::from_fn(fg, invariant, |e, s, g| {
            let mut row = vec![0.0; n];
            row[choice(e, s, g)] = 1.0;
            row
        })
    }

    pub fn row(&self, e: usize, s: usize, gi: usize) -> &[f64] {
        let e = if self.invariant { 0 } else { e };
        let start = ((e * self.n_states + s) * self.n_goals + gi) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    fn check(&self, fg: &FiniteGbmdp) -> Result<()> {
        if self.n_states != fg.n_states || self.n_goals != fg.n_goals() || self.n_actions != fg.n_actions || self.n_envs != fg.n_envs {
            return Err(Error::Mismatch("policy table does not match the instance".into()));
        }
        Ok(())
    }
}

/// Total variation between two action distributions.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Discounted state density `ρ(s | g)` of `π` in env `e`, by a direct solve
/// of `(I − γ P_πᵀ) x = ρ₀`.
pub fn occupancy(fg: &FiniteGbmdp, pi: &TabularPolicy, e: usize, gi: usize) -> Result<Vec<f64>> {
    pi.check(fg)?;
    if e >= fg.n_envs || gi >= fg.n_goals() {
        return Err(Error::Invalid("env or goal index out of range".into()));
    }
    let n = fg.n_states;
    // m[s2, s] = δ − γ P_π(s2 | s)
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        let row = pi.row(e, s, gi);
        for (a, &pa) in row.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..n {
                m[(s2, s)] -= fg.gamma * pa * fg.prob(s, a, s2);
            }
        }
    }
    let x = m
        .lu()
        .solve(&DVector::from_column_slice(&fg.rho0))
        .ok_or_else(|| Error::NonFinite("occupancy system is singular".into()))?;
    Ok(x.iter().map(|v| (1.0 - fg.gamma) * v).collect())
}

/// `J^e(π) = E_g[ρ(g | g)]` with goals uniform.
pub fn objective(fg: &FiniteGbmdp, pi: &TabularPolicy, e: usize) -> Result<f64> {
    let mut total = 0.0;
    for (gi, &g) in fg.goals.iter().enumerate() {
        total += occupancy(fg, pi, e, gi)?[g];
    }
    Ok(total / fg.n_goals() as f64)
}

/// A joint distribution over (observation, goal) in one environment:
/// `weights[s * n_goals + gi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDist {
    pub env: usize,
    pub n_goals: usize,
    pub weights: Vec<f64>,
}

impl JointDist {
    pub fn get(&self, s: usize, gi: usize) -> f64 {
        self.weights[s * self.n_goals + gi]
    }
}

/// `ρ^e_π(x, g)` with goals uniform.
pub fn joint_occupancy(fg: &FiniteGbmdp, pi: &TabularPolicy, e: usize) -> Result<JointDist> {
    let ng = fg.n_goals();
    let mut weights = vec![0.0; fg.n_states * ng];
    for gi in 0..ng {
        for (s, v) in occupancy(fg, pi, e, gi)?.into_iter().enumerate() {
            weights[s * ng + gi] = v / ng as f64;
        }
    }
    Ok(JointDist { env: e, n_goals: ng, weights })
}

/// `ε^ρ(π₁ ‖ π₂) = E_ρ[D_TV(π₁(·|x, g) ‖ π₂(·|x, g))]`.
pub fn avg_tv(rho: &JointDist, p1: &TabularPolicy, p2: &TabularPolicy) -> Result<f64> {
    if p1.n_goals != rho.n_goals || p2.n_goals != rho.n_goals || p1.n_states != p2.n_states {
        return Err(Error::Mismatch("policies do not cover the distribution's support".into()));
    }
    if rho.weights.len() != p1.n_states * rho.n_goals {
        return Err(Error::Mismatch("distribution support does not match the policies".into()));
    }
    let mut total = 0.0;
    for s in 0..p1.n_states {
        for gi in 0..rho.n_goals {
            let w = rho.get(s, gi);
            if w != 0.0 {
                total += w * tv(p1.row(rho.env, s, gi), p2.row(rho.env, s, gi));
            }
        }
    }
    Ok(total)
}

/// A finite policy class.
#[derive(Clone, Debug)]
pub struct PolicyClass {
    policies: Vec<TabularPolicy>,
}

impl PolicyClass {
    pub fn new(policies: Vec<TabularPolicy>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::Empty("policy class"));
        }
        Ok(PolicyClass { policies })
    }

    pub fn policies(&self) -> &[TabularPolicy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// `sup_{π, π' ∈ Π} |ε^{ρ₁}(π ‖ π') − ε^{ρ₂}(π ‖ π')|`, exactly.
pub fn d_pidpi(rho1: &JointDist, rho2: &JointDist, class: &PolicyClass) -> Result<f64> {
    let mut best = 0.0f64;
    for a in class.policies() {
        for b in class.policies() {
            best = best.max((avg_tv(rho1, a, b)? - avg_tv(rho2, a, b)?).abs());
        }
    }
    Ok(best)
}

/// Per-goal value iteration with reward 1 at the goal; the greedy policy is
/// defined on states, so it is invariant. Ties go to the lowest action.
pub fn optimal_invariant_policy(fg: &FiniteGbmdp) -> Result<TabularPolicy> {
    let (n, na) = (fg.n_states, fg.n_actions);
    let mut greedy = vec![0usize; n * fg.n_goals()];
    for (gi, &g) in fg.goals.iter().enumerate() {
        let mut v = vec![0.0; n];
        let q = |v: &[f64], s: usize, a: usize| -> f64 {
            let r = if s == g { 1.0 } else { 0.0 };
            r + fg.gamma * (0..n).map(|s2| fg.prob(s, a, s2) * v[s2]).sum::<f64>()
        };
        loop {
            let next: Vec<f64> = (0..n).map(|s| (0..na).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff < 1e-10 * (1.0 - fg.gamma) {
                break;
            }
        }
        for s in 0..n {
            let qs: Vec<f64> = (0..na).map(|a| q(&v, s, a)).collect();
            let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            greedy[s * fg.n_goals() + gi] = qs.iter().position(|&x| x >= best - 1e-12).unwrap_or(0);
        }
    }
    let ng = fg.n_goals();
    TabularPolicy::deterministic(fg, true, |_, s, gi| greedy[s * ng + gi])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Chain of `n` states with actions left/right, deterministic.
    fn chain(n: usize, gamma: f64, start: usize) -> FiniteGbmdp {
        let mut p = vec![0.0; n * 2 * n];
        for s in 0..n {
            let l = s.saturating_sub(1);
            let r = (s + 1).min(n - 1);
            p[(s * 2) * n + l] = 1.0;
            p[(s * 2 + 1) * n + r] = 1.0;
        }
        let mut rho0 = vec![0.0; n];
        rho0[start] = 1.0;
        FiniteGbmdp::new(n, 2, 1, p, rho0, (0..n).collect(), gamma).unwrap()
    }

    #[test]
    fn single_state_occupancy_is_one() {
        let fg = FiniteGbmdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![0], 0.7).unwrap();
        let pi = TabularPolicy::deterministic(&fg, true, |_, _, _| 0).unwrap();
        assert_eq!(occupancy(&fg, &pi, 0, 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn absorbing_two_state_chain() {
        // s0 -> s1 absorbing under "right": ρ = (1−γ)[1, γ/(1−γ)] = [0.5, 0.5].
        let fg = chain(2, 0.5, 0);
        let right = TabularPolicy::deterministic(&fg, true, |_, _, _| 1).unwrap();
        let rho = occupancy(&fg, &right, 0, 0).unwrap();
        assert!((rho[0] - 0.5).abs() < 1e-12 && (rho[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn objective_closed_forms() {
        // γ → 0: only t = 0 counts, so J = E_g[ρ₀(g)] = 1/|G| for a point start.
        let fg = chain(3, 1e-9, 0);
        let right = TabularPolicy::deterministic(&fg, true, |_, _, _| 1).unwrap();
        assert!((objective(&fg, &right, 0).unwrap() - 1.0 / 3.0).abs() < 1e-8);

        // Start at 0 with goal 1; moving right once then staying reaches the
        // goal at t = 1, so J = (1−γ) Σ_{t≥1} γ^t = γ.
        let mut p = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            p[(s * 2) * 3 + s] = 1.0; // action 0 stays
            p[(s * 2 + 1) * 3 + (s + 1).min(2)] = 1.0; // action 1 moves right
        }
        let fg = FiniteGbmdp::new(3, 2, 1, p, vec![1.0, 0.0, 0.0], vec![1], 0.8).unwrap();
        let pi = TabularPolicy::deterministic(&fg, true, |_, s, _| if s == 0 { 1 } else { 0 }).unwrap();
        assert!((objective(&fg, &pi, 0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(tv(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert!((tv(&[0.6, 0.4], &[0.5, 0.5]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn avg_tv_of_constant_policies() {
        let fg = chain(3, 0.9, 1);
        let a = TabularPolicy::from_fn(&fg, true, |_, _, _| vec![0.6, 0.4]).unwrap();
        let b = TabularPolicy::from_fn(&fg, true, |_, _, _| vec![0.5, 0.5]).unwrap();
        let rho = joint_occupancy(&fg, &a, 0).unwrap();
        assert!((avg_tv(&rho, &a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(avg_tv(&rho, &a, &a).unwrap(), 0.0);
        let l = TabularPolicy::deterministic(&fg, true, |_, _, _| 0).unwrap();
        let r = TabularPolicy::deterministic(&fg, true, |_, _, _| 1).unwrap();
        assert!((avg_tv(&rho, &l, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn d_pidpi_hand_computed() {
        // Two states, one goal, one env. Policies: all-left, all-right,
        // and left in s0 / right in s1.
        let mut fg1 = chain(2, 0.5, 0);
        fg1.goals = vec![0];
        let l = TabularPolicy::deterministic(&fg1, true, |_, _, _| 0).unwrap();
        let m = TabularPolicy::deterministic(&fg1, true, |_, s, _| s).unwrap();
        let class = PolicyClass::new(vec![l.clone(), m.clone()]).unwrap();
        let r1 = JointDist { env: 0, n_goals: 1, weights: vec![0.25, 0.75] };
        let r2 = JointDist { env: 0, n_goals: 1, weights: vec![0.5, 0.5] };
        // Pairs: (l,l)=0, (m,m)=0, (l,m)=(m,l) differ only at s1:
        // |0.75 − 0.5| = 0.25.
        assert!((d_pidpi(&r1, &r2, &class).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(d_pidpi(&r1, &r1, &class).unwrap(), 0.0);
        let single = PolicyClass::new(vec![m]).unwrap();
        assert_eq!(d_pidpi(&r1, &r2, &single).unwrap(), 0.0);
        assert!(PolicyClass::new(vec![]).is_err());
    }

    #[test]
    fn value_iteration_moves_toward_goal() {
        let mut fg = chain(3, 0.9, 0);
        fg.goals = vec![2];
        let pi = optimal_invariant_policy(&fg).unwrap();
        assert_eq!(pi.row(0, 0, 0), &[0.0, 1.0]);
        assert_eq!(pi.row(0, 1, 0), &[0.0, 1.0]);
        assert_eq!(pi.row(0, 2, 0), &[0.0, 1.0]);
        assert!(pi.invariant);

        let one = FiniteGbmdp::new(1, 2, 3, vec![1.0, 1.0], vec![1.0], vec![0], 0.9).unwrap();
        let pi = optimal_invariant_policy(&one).unwrap();
        for e in 0..3 {
            assert_eq!(pi.row(e, 0, 0), &[1.0, 0.0]);
        }
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(FiniteGbmdp::new(13, 2, 1, vec![], vec![], vec![0], 0.5).is_err());
        assert!(FiniteGbmdp::new(1, 1, 1, vec![0.5], vec![1.0], vec![0], 0.5).is_err());
        assert!(FiniteGbmdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![], 0.5).is_err());
        assert!(FiniteGbmdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![0], 1.0).is_err());
    }
}
