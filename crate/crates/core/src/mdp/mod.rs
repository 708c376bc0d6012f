//! Finite MDPs, policies, and exact policy evaluation.
//!
//! Transition tensors are stored flat as `T[s][a][s']`. Terminal states are
//! absorbing self-loops with zero reward; the `terminal` flags only tell the
//! dataset layer where an episode ends.

mod generate;
mod text;

pub use generate::{make_chain, make_garnet, make_gridworld, GridSpec};
pub use text::{mdp_from_text, mdp_to_text};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Row-sum slack for probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Restart weight mixed into reducible chains before computing a stationary distribution.
pub const RESTART_WEIGHT: f64 = 1e-3;
/// Default sup-norm tolerance for policy evaluation.
pub const EVAL_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    /// `transition` is flat `[s][a][s']`, `reward` is flat `[s][a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("an MDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid(format!("discount {discount} outside [0, 1)")));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(invalid(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(invalid(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(invalid(format!("non-finite reward {r}")));
        }
        for (k, row) in transition.chunks(n_states).enumerate() {
            check_distribution(
                row,
                &format!("T[{}][{}]", k / n_actions, k % n_actions),
            )?;
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            terminal: vec![false; n_states],
        })
    }

    /// Marks states as terminal. Each must already be a zero-reward absorbing state.
    pub fn with_terminals(mut self, states: &[usize]) -> Result<Self> {
        for &s in states {
            if s >= self.n_states {
                return Err(invalid(format!("terminal state {s} out of range")));
            }
            for a in 0..self.n_actions {
                if self.next_dist(s, a)[s] != 1.0 || self.reward(s, a) != 0.0 {
                    return Err(invalid(format!(
                        "terminal state {s} must be a zero-reward self-loop"
                    )));
                }
            }
            self.terminal[s] = true;
        }
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| self.terminal[s])
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn r_min(&self) -> f64 {
        self.reward.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every `T[s][a]` is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.transition
            .chunks(self.n_states)
            .all(|row| row.contains(&1.0))
    }

    /// Successor of a deterministic `(s, a)`, if it is one.
    pub fn successor(&self, s: usize, a: usize) -> Option<usize> {
        self.next_dist(s, a).iter().position(|&p| p == 1.0)
    }

    /// Same dynamics with rewards mapped through `r -> scale * r + shift`.
    pub fn map_rewards(&self, scale: f64, shift: f64) -> Self {
        let mut out = self.clone();
        out.reward.iter_mut().for_each(|r| *r = scale * *r + shift);
        out
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid(format!("discount {discount} outside [0, 1)")));
        }
        let mut out = self.clone();
        out.discount = discount;
        Ok(out)
    }

    /// Min-max normalized rewards; a constant reward table maps to zeros.
    pub fn minmax_normalized(&self) -> Self {
        let (lo, hi) = (self.r_min(), self.r_max());
        let mut out = self.clone();
        out.reward
            .iter_mut()
            .for_each(|r| *r = if hi > lo { ((*r - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 });
        out
    }

    /// Transition matrix of action `a` (`n x n`).
    pub fn action_matrix(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_states, |s, t| self.next_dist(s, a)[t])
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(invalid(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                policy.n_states, policy.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// `r^pi[s] = sum_a pi(a|s) r[s][a]`.
    pub fn policy_reward(&self, policy: &Policy) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        Ok((0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| policy.prob(s, a) * self.reward(s, a))
                    .sum()
            })
            .collect())
    }

    /// `P^pi[s][s'] = sum_a pi(a|s) T[s][a][s']`.
    pub fn policy_matrix(&self, policy: &Policy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (t, &q) in self.next_dist(s, a).iter().enumerate() {
                    p[(s, t)] += w * q;
                }
            }
        }
        Ok(p)
    }
}

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(invalid(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi[{s}]"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Picks `actions[s]` with probability one.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(invalid(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    /// Random policy with Dirichlet(1) rows.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut crate::rng::Rng) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            probs.extend(generate::dirichlet_row(n_actions, rng));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Actions with positive probability at `s`.
    pub fn support(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(s)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(a, _)| a)
    }
}

/// State values `V^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub v: Vec<f64>,
}

impl ValueTable {
    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A probability vector over states, with the regularization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub mu: Vec<f64>,
    /// Whether the chain was reducible and mixed with a uniform restart.
    pub regularized: bool,
    pub restart_weight: f64,
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterative evaluation of `v = r + gamma * P v` from an arbitrary start.
///
/// Stops once the a-posteriori bound `gamma / (1 - gamma) * change` drops to
/// `tol`, so the result is within `tol` of the exact solution.
fn evaluate_from(
    reward: &[f64],
    p: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    mut v: Vec<f64>,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance {tol} must be positive")));
    }
    let n = reward.len();
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / gamma
    } else {
        f64::INFINITY
    };
    let mut history = Vec::new();
    for sweep in 0..MAX_SWEEPS {
        let next: Vec<f64> = (0..n)
            .map(|s| reward[s] + gamma * (0..n).map(|t| p[(s, t)] * v[t]).sum::<f64>())
            .collect();
        let change = sup_norm_diff(&next, &v);
        v = next;
        if change <= threshold {
            return Ok(v);
        }
        if sweep % 1000 == 0 {
            history.push(change);
        }
    }
    Err(Error::Convergence {
        sweeps: MAX_SWEEPS,
        last_change: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// `V^pi` by synchronous value iteration, accurate to `tol` in sup-norm.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<ValueTable> {
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_matrix(policy)?;
    let v = evaluate_from(&r, &p, mdp.discount, tol, vec![0.0; mdp.n_states])?;
    Ok(ValueTable { v })
}

/// Same as [`policy_evaluation`] but starting the iteration at `init`.
pub fn policy_evaluation_from(
    mdp: &TabularMdp,
    policy: &Policy,
    tol: f64,
    init: Vec<f64>,
) -> Result<ValueTable> {
    if init.len() != mdp.n_states {
        return Err(invalid("initial value vector has the wrong length"));
    }
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_matrix(policy)?;
    let v = evaluate_from(&r, &p, mdp.discount, tol, init)?;
    Ok(ValueTable { v })
}

/// `Q^pi[s][a]` as a flat `[s][a]` table.
pub fn q_evaluation(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<Vec<f64>> {
    let gamma = mdp.discount;
    let v = policy_evaluation(mdp, policy, tol)?.v;
    let mut q = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let cont: f64 = mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            q.push(mdp.reward(s, a) + gamma * cont);
        }
    }
    Ok(q)
}

fn reachable(p: &DMatrix<f64>, from: usize, transpose: bool) -> Vec<bool> {
    let n = p.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(s) = stack.pop() {
        for t in 0..n {
            let w = if transpose { p[(t, s)] } else { p[(s, t)] };
            if w > 0.0 && !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    seen
}

/// Strong connectivity of the support graph of `p`.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    reachable(p, 0, false).into_iter().all(|x| x) && reachable(p, 0, true).into_iter().all(|x| x)
}

/// Stationary distribution of a row-stochastic matrix; reducible chains get the
/// uniform restart of weight [`RESTART_WEIGHT`].
pub fn stationary_of_matrix(p: &DMatrix<f64>, tol: f64) -> Result<StateDistribution> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance {tol} must be positive")));
    }
    let n = p.nrows();
    let regularized = !is_irreducible(p);
    let rho = if regularized { RESTART_WEIGHT } else { 0.0 };
    let chain = p.map(|x| (1.0 - rho) * x).add_scalar(rho / n as f64);
    let ct = chain.transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    let mut last = f64::NAN;
    for _ in 0..MAX_SWEEPS {
        let stepped = &ct * &mu;
        last = (&stepped - &mu).abs().sum();
        if last <= tol {
            let total = stepped.sum();
            return Ok(StateDistribution {
                mu: stepped.iter().map(|x| x / total).collect(),
                regularized,
                restart_weight: rho,
            });
        }
        // lazy step: same fixed point, no periodic oscillation
        mu = (stepped + &mu) * 0.5;
    }
    Err(Error::Convergence {
        sweeps: MAX_SWEEPS,
        last_change: last,
        history: vec![last],
    })
}

/// `mu_pi` for the chain induced by `policy`.
pub fn stationary_distribution(
    mdp: &TabularMdp,
    policy: &Policy,
    tol: f64,
) -> Result<StateDistribution> {
    stationary_of_matrix(&mdp.policy_matrix(policy)?, tol)
}

/// Normalized discounted occupancy `(1 - gamma) sum_t gamma^t P^t[start, .]`.
pub fn discounted_occupancy(p: &DMatrix<f64>, start: usize, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    let n = p.nrows();
    if start >= n {
        return Err(invalid(format!("start state {start} out of range")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("discount {gamma} outside [0, 1)")));
    }
    let pt = p.transpose();
    let mut d = DVector::zeros(n);
    d[start] = 1.0 - gamma;
    let mut term = d.clone();
    for _ in 0..MAX_SWEEPS {
        term = (&pt * &term) * gamma;
        d += &term;
        if term.abs().sum() <= tol {
            return Ok(d.iter().copied().collect());
        }
    }
    Err(invalid("discounted occupancy did not converge"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn one_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], gamma).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![0.0, 0.0], 0.9);
        assert!(matches!(err, Err(Error::Validation(_))));
        let neg = TabularMdp::new(2, 1, vec![1.2, -0.2, 0.0, 1.0], vec![0.0, 0.0], 0.9);
        assert!(neg.is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0).is_err());
    }

    #[test]
    fn geometric_series_value() {
        let v = policy_evaluation(&one_state(1.0, 0.5), &Policy::uniform(1, 1), 1e-12).unwrap();
        assert!((v.v[0] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp = make_garnet(6, 3, 2, 1.0, 4).unwrap();
        assert_eq!(mdp.r_max(), 0.0);
        let v = policy_evaluation(&mdp, &Policy::uniform(6, 3), 1e-10).unwrap();
        assert!(v.v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn myopic_q_is_reward() {
        let mdp = make_garnet(5, 2, 2, 0.0, 1).unwrap().with_discount(0.0).unwrap();
        let q = q_evaluation(&mdp, &Policy::uniform(5, 2), 1e-10).unwrap();
        assert_eq!(q, mdp.rewards());
    }

    #[test]
    fn single_state_q_matches_value_per_action() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 3.0], 0.5).unwrap();
        let pol = Policy::deterministic(2, &[1]).unwrap();
        let q = q_evaluation(&mdp, &pol, 1e-12).unwrap();
        // V = 3 / (1 - 0.5) = 6 under action 1
        assert!((q[1] - 6.0).abs() < 1e-10);
        assert!((q[0] - (1.0 + 0.5 * 6.0)).abs() < 1e-10);
    }

    #[test]
    fn swap_chain_is_uniform() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0], 0.9).unwrap();
        let mu = stationary_distribution(&mdp, &Policy::uniform(2, 1), 1e-12).unwrap();
        assert!(!mu.regularized);
        assert!((mu.mu[0] - 0.5).abs() < 1e-12 && (mu.mu[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn absorbing_state_collects_mass() {
        let mdp = make_chain(&[0.0, 0.0, 0.0, 0.0], 0.0, 0.9).unwrap();
        // always move right; state 3 clamps onto itself
        let pol = Policy::deterministic(2, &[1, 1, 1, 1]).unwrap();
        let mu = stationary_distribution(&mdp, &pol, 1e-13).unwrap();
        assert!(mu.regularized);
        assert!(mu.mu[3] > 0.99, "{:?}", mu.mu);
    }

    #[test]
    fn occupancy_sums_to_one() {
        let mut g = rng::from_seed(3);
        let mdp = make_garnet(5, 2, 3, 0.0, 9).unwrap();
        let pol = Policy::random(5, 2, &mut g);
        let p = mdp.policy_matrix(&pol).unwrap();
        let d = discounted_occupancy(&p, 2, 0.8, 1e-14).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_starts_agree() {
        let mut g = rng::from_seed(11);
        let mdp = make_garnet(7, 3, 3, 0.2, 5).unwrap();
        let pol = Policy::random(7, 3, &mut g);
        let tol = 1e-10;
        let a = policy_evaluation(&mdp, &pol, tol).unwrap();
        let b = policy_evaluation_from(&mdp, &pol, tol, vec![50.0; 7]).unwrap();
        assert!(a.sup_distance(&b) <= 2.0 * tol);
    }
}
