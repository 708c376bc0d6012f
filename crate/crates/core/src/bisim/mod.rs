//! Exact fixed points of bisimulation-style operators on state pairs.
//!
//! Every solver starts at `G = 0` and runs synchronous sweeps until the
//! sup-norm change drops to the tolerance, so it reaches the least fixed point
//! from below.

mod gstar;
mod lifted;
mod measurement;
mod wasserstein;

pub use gstar::{g_star_fixed_point, g_star_fixed_point_model, StateActionMeasurement};
pub use lifted::{build_lifted_mdp, lifted_index, LiftedMdp, DEFAULT_LIFT_CAP};
pub use measurement::{Measurement, MeasurementKind};
pub use wasserstein::wasserstein1;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmpiricalMdp, OfflineDataset};
use crate::error::{invalid, Error, Result};
use crate::mdp::{policy_evaluation, Policy, TabularMdp, EVAL_TOL};

/// Default stopping tolerance on the sup-norm change between sweeps.
pub const FIXED_POINT_TOL: f64 = 1e-9;
/// Sweep cap for the fixed-point solvers in this module.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Weights on the reward difference and on the continuation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub c_r: f64,
    pub c_k: f64,
}

impl ScalingConfig {
    pub fn new(c_r: f64, c_k: f64) -> Result<Self> {
        let s = Self { c_r, c_k };
        s.validate()?;
        Ok(s)
    }

    /// `c_r = 1, c_k = gamma`.
    pub fn standard(gamma: f64) -> Self {
        Self { c_r: 1.0, c_k: gamma }
    }

    /// `c_r = 1 - gamma, c_k = gamma`; with rewards in `[0, 1]` every entry stays in `[0, 1]`.
    pub fn reward_scaled(gamma: f64) -> Self {
        Self {
            c_r: 1.0 - gamma,
            c_k: gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_r >= 0.0 && self.c_r.is_finite()) {
            return Err(invalid(format!("c_r = {} must be finite and >= 0", self.c_r)));
        }
        if !(0.0..1.0).contains(&self.c_k) {
            return Err(invalid(format!("c_k = {} outside [0, 1)", self.c_k)));
        }
        Ok(())
    }

    /// Largest possible fixed-point entry for rewards spanning `reward_range`.
    pub fn bound(&self, reward_range: f64) -> f64 {
        self.c_r * reward_range / (1.0 - self.c_k)
    }
}

/// Everything the pair operators need: rewards, action weights, and per-action
/// continuation matrices. Built from an MDP with a policy, or from a dataset
/// (its maximum-likelihood model with the empirical behavior policy, where
/// `done` tuples do not continue).
///
/// States a dataset never leaves from are unsupported; pairs touching them are
/// held at zero.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    n_states: usize,
    n_actions: usize,
    reward: Vec<f64>,
    policy: Vec<f64>,
    cont: Vec<DMatrix<f64>>,
    supported: Vec<bool>,
}

impl OperatorModel {
    pub fn from_mdp(mdp: &TabularMdp, policy: &Policy) -> Result<Self> {
        mdp.check_policy(policy)?;
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        Ok(Self {
            n_states: n,
            n_actions: m,
            reward: mdp.rewards().to_vec(),
            policy: (0..n).flat_map(|s| policy.row(s).to_vec()).collect(),
            cont: (0..m).map(|a| mdp.action_matrix(a)).collect(),
            supported: vec![true; n],
        })
    }

    pub fn from_dataset(ds: &OfflineDataset) -> Self {
        Self::from_empirical(&ds.empirical_mdp())
    }

    pub fn from_empirical(e: &EmpiricalMdp) -> Self {
        let (n, m) = (e.n_states(), e.n_actions());
        let cont = (0..m)
            .map(|a| DMatrix::from_fn(n, n, |s, t| e.continuation(s, a)[t]))
            .collect();
        Self {
            n_states: n,
            n_actions: m,
            reward: e.reward_table().to_vec(),
            policy: (0..n)
                .flat_map(|s| (0..m).map(move |a| (s, a)))
                .map(|(s, a)| e.policy_prob(s, a))
                .collect(),
            cont,
            supported: (0..n).map(|s| e.state_supported(s)).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn policy_prob(&self, s: usize, a: usize) -> f64 {
        self.policy[s * self.n_actions + a]
    }

    /// Continuation matrix of action `a`: row `s` is `T(.|s, a)` (sub-stochastic on datasets).
    pub fn cont(&self, a: usize) -> &DMatrix<f64> {
        &self.cont[a]
    }

    pub fn is_supported(&self, s: usize) -> bool {
        self.supported[s]
    }

    /// Actions with positive weight at `s`.
    pub fn actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.policy_prob(s, a) > 0.0)
    }

    pub fn policy_reward(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.policy_prob(s, a) * self.reward(s, a)).sum())
            .collect()
    }

    pub fn policy_matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_states, self.n_states);
        for a in 0..self.n_actions {
            for s in 0..self.n_states {
                let w = self.policy_prob(s, a);
                if w > 0.0 {
                    for t in 0..self.n_states {
                        p[(s, t)] += w * self.cont[a][(s, t)];
                    }
                }
            }
        }
        p
    }

    /// Every transition row of every weighted action is a point mass.
    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states).all(|s| {
            self.actions(s)
                .all(|a| self.cont[a].row(s).iter().all(|&p| p == 0.0 || p == 1.0))
        })
    }

    /// Zeroes every pair that touches an unsupported state and restores exact symmetry.
    pub(crate) fn finish(&self, mut x: DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_states;
        for i in 0..n {
            for j in i..n {
                let v = if self.supported[i] && self.supported[j] {
                    0.5 * (x[(i, j)] + x[(j, i)])
                } else {
                    0.0
                };
                x[(i, j)] = v;
                x[(j, i)] = v;
            }
        }
        x
    }
}

/// `|x_i - x_j|` as a matrix.
pub(crate) fn abs_diff(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x.len(), |i, j| (x[i] - x[j]).abs())
}

/// Independent-coupling expectation `P G P^T`.
pub fn coupled_expectation(p: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    p * g * p.transpose()
}

/// One application of `c_r |r_i - r_j| + c_k E[G(s'_i, s'_j)]` under the independent coupling.
pub fn scaled_operator(model: &OperatorModel, g: &DMatrix<f64>, scaling: ScalingConfig) -> DMatrix<f64> {
    let p = model.policy_matrix();
    let x = abs_diff(&model.policy_reward()) * scaling.c_r + coupled_expectation(&p, g) * scaling.c_k;
    model.finish(x)
}

/// A converged solve together with its per-sweep change history.
#[derive(Debug, Clone)]
pub struct FixedPointRun {
    pub measurement: Measurement,
    pub sweeps: usize,
    /// Sup-norm change of every sweep.
    pub history: Vec<f64>,
}

pub(crate) fn sup_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("tolerance {tol} must be positive")))
    }
}

/// Iterates `step` from zero until the change is at most `tol`.
pub(crate) fn iterate(
    n: usize,
    tol: f64,
    max_sweeps: usize,
    mut step: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_tol(tol)?;
    let mut g = DMatrix::zeros(n, n);
    let mut history = Vec::new();
    for _ in 0..max_sweeps {
        let next = step(&g)?;
        let change = sup_diff(&next, &g);
        if !change.is_finite() {
            return Err(Error::Convergence {
                sweeps: history.len() + 1,
                last_change: change,
                history,
            });
        }
        history.push(change);
        g = next;
        if change <= tol {
            return Ok((g, history));
        }
    }
    Err(Error::Convergence {
        sweeps: max_sweeps,
        last_change: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

pub fn scaled_fixed_point_model(model: &OperatorModel, scaling: ScalingConfig, tol: f64) -> Result<FixedPointRun> {
    scaling.validate()?;
    let p = model.policy_matrix();
    let pt = p.transpose();
    let reward_part = abs_diff(&model.policy_reward()) * scaling.c_r;
    let (g, history) = iterate(model.n_states(), tol, MAX_SWEEPS, |g| {
        Ok(model.finish(&reward_part + (&p * g * &pt) * scaling.c_k))
    })?;
    Ok(FixedPointRun {
        measurement: Measurement::new(g, MeasurementKind::Scaled).with_scaling(scaling),
        sweeps: history.len(),
        history,
    })
}

/// Fixed point of the scaled operator with the independent coupling.
pub fn scaled_fixed_point(
    mdp: &TabularMdp,
    policy: &Policy,
    scaling: ScalingConfig,
    tol: f64,
) -> Result<Measurement> {
    let model = OperatorModel::from_mdp(mdp, policy)?;
    Ok(scaled_fixed_point_model(&model, scaling, tol)?.measurement)
}

/// The unscaled independent-coupling operator (`c_r = 1`, `c_k = gamma`).
pub fn generalized_fixed_point(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<Measurement> {
    let mut m = scaled_fixed_point(mdp, policy, ScalingConfig::standard(mdp.discount()), tol)?;
    m.kind = MeasurementKind::Generalized;
    Ok(m)
}

/// One application of `|r_i - r_j| + gamma W1_G(T_i, T_j)` under the policy.
pub fn pi_bisim_operator(r: &[f64], p: &DMatrix<f64>, gamma: f64, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| p.row(i).iter().copied().collect()).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = wasserstein::transport(&rows[i], &rows[j], |a, b| g[(a, b)]);
            let v = (r[i] - r[j]).abs() + gamma * w;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn pi_bisim_fixed_point_traced(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<FixedPointRun> {
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_matrix(policy)?;
    let gamma = mdp.discount();
    let (g, history) = iterate(mdp.n_states(), tol, MAX_SWEEPS, |g| Ok(pi_bisim_operator(&r, &p, gamma, g)))?;
    Ok(FixedPointRun {
        measurement: Measurement::new(g, MeasurementKind::PiBisim)
            .with_scaling(ScalingConfig::standard(gamma)),
        sweeps: history.len(),
        history,
    })
}

/// On-policy bisimulation metric with the exact Wasserstein term.
pub fn pi_bisim_fixed_point(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<Measurement> {
    Ok(pi_bisim_fixed_point_traced(mdp, policy, tol)?.measurement)
}

/// Diagnostic comparison of a measurement against value gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGapReport {
    /// `max over pairs of c_r |V_i - V_j| - g(i, j)`; nonpositive when the bound holds.
    pub max_excess: f64,
    pub violations: usize,
    pub pairs: usize,
    pub notes: Vec<String>,
}

/// Checks `c_r |V_i - V_j| <= g(i, j)`, which holds for fixed points with `c_k >= gamma`.
pub fn value_difference_bound_check(
    mdp: &TabularMdp,
    policy: &Policy,
    g: &Measurement,
    scaling: ScalingConfig,
) -> Result<ValueGapReport> {
    let n = mdp.n_states();
    if g.n() != n {
        return Err(invalid("measurement size does not match the MDP"));
    }
    let v = policy_evaluation(mdp, policy, EVAL_TOL)?.v;
    let mut notes = Vec::new();
    if scaling.c_k < mdp.discount() {
        notes.push(format!(
            "scaling mismatch: c_k = {} is below the discount {}; the bound is not guaranteed",
            scaling.c_k,
            mdp.discount()
        ));
    }
    if let Some(s) = g.scaling {
        if s != scaling {
            notes.push(format!(
                "scaling mismatch: measurement was built with c_r = {}, c_k = {}",
                s.c_r, s.c_k
            ));
        }
    }
    let slack = 1e-9 + scaling.c_r * EVAL_TOL * 2.0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..n {
        for j in 0..n {
            let e = scaling.c_r * (v[i] - v[j]).abs() - g.g[(i, j)];
            max_excess = max_excess.max(e);
            if e > slack {
                violations += 1;
            }
        }
    }
    Ok(ValueGapReport {
        max_excess,
        violations,
        pairs: n * n,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::make_garnet;
    use crate::rng;

    fn two_absorbing(gamma: f64) -> TabularMdp {
        TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0], gamma).unwrap()
    }

    #[test]
    fn absorbing_pair_is_geometric() {
        let mdp = two_absorbing(0.5);
        let pol = Policy::uniform(2, 1);
        let pb = pi_bisim_fixed_point(&mdp, &pol, 1e-12).unwrap();
        let sc = scaled_fixed_point(&mdp, &pol, ScalingConfig::standard(0.5), 1e-12).unwrap();
        assert!((pb.g[(0, 1)] - 2.0).abs() < 1e-11);
        assert!((sc.g[(0, 1)] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn bisimilar_states_have_zero_distance() {
        // states 0 and 1 both pay 1 and jump to state 2
        let t = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(3, 1, t, vec![1.0, 1.0, 0.0], 0.9).unwrap();
        let g = pi_bisim_fixed_point(&mdp, &Policy::uniform(3, 1), 1e-10).unwrap();
        assert_eq!(g.g[(0, 1)], 0.0);
    }

    #[test]
    fn pi_bisim_bounds_value_gaps() {
        let mdp = make_garnet(5, 2, 3, 0.0, 13).unwrap();
        let pol = Policy::random(5, 2, &mut rng::from_seed(2));
        let g = pi_bisim_fixed_point(&mdp, &pol, 1e-10).unwrap();
        let rep = value_difference_bound_check(&mdp, &pol, &g, ScalingConfig::standard(0.9)).unwrap();
        assert_eq!(rep.violations, 0, "{rep:?}");
        assert!(rep.notes.is_empty());
    }

    #[test]
    fn mismatched_scaling_is_reported() {
        let mdp = make_garnet(4, 2, 2, 0.0, 1).unwrap();
        let pol = Policy::uniform(4, 2);
        let g = scaled_fixed_point(&mdp, &pol, ScalingConfig::standard(0.9), 1e-9).unwrap();
        let rep = value_difference_bound_check(&mdp, &pol, &g, ScalingConfig::new(1.0, 0.5).unwrap()).unwrap();
        assert!(rep.notes.iter().any(|n| n.contains("scaling mismatch")));
    }

    #[test]
    fn zero_reward_gives_zero_everywhere() {
        let mdp = make_garnet(5, 2, 2, 1.0, 3).unwrap();
        let pol = Policy::uniform(5, 2);
        let g = scaled_fixed_point(&mdp, &pol, ScalingConfig::standard(0.9), 1e-9).unwrap();
        assert!(g.g.iter().all(|&x| x == 0.0));
        let rep = value_difference_bound_check(&mdp, &pol, &g, ScalingConfig::standard(0.9)).unwrap();
        assert_eq!(rep.max_excess, 0.0);
    }

    #[test]
    fn sweeps_contract_by_c_k() {
        let mdp = make_garnet(7, 3, 3, 0.2, 21).unwrap();
        let pol = Policy::random(7, 3, &mut rng::from_seed(4));
        let s = ScalingConfig::new(0.7, 0.8).unwrap();
        let run = scaled_fixed_point_model(&OperatorModel::from_mdp(&mdp, &pol).unwrap(), s, 1e-12).unwrap();
        for w in run.history.windows(2) {
            assert!(w[1] <= s.c_k * w[0] + 1e-15, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn deterministic_mdp_solvers_agree() {
        let mdp = make_garnet(6, 2, 1, 0.0, 8).unwrap();
        let pol = Policy::deterministic(2, &[0, 1, 1, 0, 0, 1]).unwrap();
        let pb = pi_bisim_fixed_point(&mdp, &pol, 1e-11).unwrap();
        let sc = generalized_fixed_point(&mdp, &pol, 1e-11).unwrap();
        assert!(pb.sup_distance(&sc) < 1e-9);
    }
}
