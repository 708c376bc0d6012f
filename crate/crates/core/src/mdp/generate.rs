use rand::Rng as _;

use super::TabularMdp;
use crate::error::{invalid, Result};
use crate::rng::{self, Rng};

/// Discount given to generated garnets; use [`TabularMdp::with_discount`] to change it.
pub const GARNET_DISCOUNT: f64 = 0.9;

pub(crate) fn dirichlet_row(k: usize, rng: &mut Rng) -> Vec<f64> {
    // Exp(1) draws normalized to the simplex
    let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-12).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random "garnet" MDP: each `(s, a)` moves to `branching` distinct successors with
/// Dirichlet(1) weights; rewards are uniform in `[0, 1)` and zeroed with
/// probability `reward_sparsity`.
pub fn make_garnet(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    reward_sparsity: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if branching == 0 || branching > n_states {
        return Err(invalid(format!(
            "branching {branching} must lie in 1..={n_states}"
        )));
    }
    if !(0.0..=1.0).contains(&reward_sparsity) {
        return Err(invalid(format!("reward sparsity {reward_sparsity} outside [0, 1]")));
    }
    let mut g = rng::from_seed(seed);
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = Vec::with_capacity(n_states * n_actions);
    let mut pool: Vec<usize> = (0..n_states).collect();
    for s in 0..n_states {
        for a in 0..n_actions {
            // partial Fisher-Yates picks the successor set
            for k in 0..branching {
                let j = g.random_range(k..n_states);
                pool.swap(k, j);
            }
            let weights = dirichlet_row(branching, &mut g);
            let row = &mut transition[(s * n_actions + a) * n_states..][..n_states];
            for (&t, w) in pool[..branching].iter().zip(weights) {
                row[t] = w;
            }
            let r = g.random::<f64>();
            let sparse = g.random::<f64>() < reward_sparsity;
            reward.push(if sparse { 0.0 } else { r });
        }
    }
    TabularMdp::new(n_states, n_actions, transition, reward, GARNET_DISCOUNT)
}

/// Two-action chain (0 = left, 1 = right) clamped at both ends. With probability
/// `slip` the move goes the opposite way. Taking any action in state `s` pays
/// `rewards[s]`; state index equals chain position.
pub fn make_chain(rewards: &[f64], slip: f64, discount: f64) -> Result<TabularMdp> {
    let n = rewards.len();
    if n == 0 {
        return Err(invalid("chain needs at least one state"));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(invalid(format!("slip {slip} outside [0, 1]")));
    }
    let left = |s: usize| s.saturating_sub(1);
    let right = |s: usize| (s + 1).min(n - 1);
    let mut transition = vec![0.0; n * 2 * n];
    let mut reward = Vec::with_capacity(2 * n);
    for s in 0..n {
        for a in 0..2 {
            let (go, back) = if a == 0 { (left(s), right(s)) } else { (right(s), left(s)) };
            let row = &mut transition[(s * 2 + a) * n..][..n];
            row[go] += 1.0 - slip;
            row[back] += slip;
            reward.push(rewards[s]);
        }
    }
    TabularMdp::new(n, 2, transition, reward, discount)
}

/// Gridworld layout. Cell `(row, col)` is state `row * cols + col`.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Reward for landing in each cell, indexed like states.
    pub cell_rewards: Vec<f64>,
    /// Cells that become zero-reward absorbing terminals.
    pub absorbing: Vec<usize>,
    /// Probability that the move is replaced by a uniformly random direction.
    pub slip: f64,
    pub discount: f64,
}

/// Four-action gridworld (0 up, 1 right, 2 down, 3 left); moves off the grid stay put.
pub fn make_gridworld(spec: &GridSpec) -> Result<TabularMdp> {
    let (rows, cols) = (spec.rows, spec.cols);
    let n = rows * cols;
    if n == 0 {
        return Err(invalid("grid must have at least one cell"));
    }
    if spec.cell_rewards.len() != n {
        return Err(invalid(format!(
            "{} cell rewards for a {rows}x{cols} grid",
            spec.cell_rewards.len()
        )));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(invalid(format!("slip {} outside [0, 1]", spec.slip)));
    }
    let step = |s: usize, dir: usize| -> usize {
        let (r, c) = (s / cols, s % cols);
        match dir {
            0 if r > 0 => s - cols,
            1 if c + 1 < cols => s + 1,
            2 if r + 1 < rows => s + cols,
            3 if c > 0 => s - 1,
            _ => s,
        }
    };
    let mut absorbing = vec![false; n];
    for &s in &spec.absorbing {
        if s >= n {
            return Err(invalid(format!("absorbing cell {s} out of range")));
        }
        absorbing[s] = true;
    }
    let mut transition = vec![0.0; n * 4 * n];
    let mut reward = Vec::with_capacity(4 * n);
    for s in 0..n {
        for a in 0..4 {
            let row = &mut transition[(s * 4 + a) * n..][..n];
            if absorbing[s] {
                row[s] = 1.0;
                reward.push(0.0);
                continue;
            }
            row[step(s, a)] += 1.0 - spec.slip;
            for dir in 0..4 {
                row[step(s, dir)] += spec.slip / 4.0;
            }
            reward.push(row.iter().zip(&spec.cell_rewards).map(|(p, r)| p * r).sum());
        }
    }
    TabularMdp::new(n, 4, transition, reward, spec.discount)?.with_terminals(&spec.absorbing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{policy_evaluation, Policy};
    use std::collections::VecDeque;

    #[test]
    fn garnet_single_state() {
        let mdp = make_garnet(1, 1, 1, 0.0, 3).unwrap();
        assert_eq!(mdp.next_dist(0, 0), &[1.0]);
    }

    #[test]
    fn garnet_is_seed_deterministic() {
        let a = make_garnet(20, 4, 3, 0.5, 7).unwrap();
        let b = make_garnet(20, 4, 3, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_garnet(20, 4, 3, 0.5, 8).unwrap());
    }

    #[test]
    fn garnet_respects_invariants() {
        let mdp = make_garnet(20, 4, 3, 0.5, 7).unwrap();
        for s in 0..20 {
            for a in 0..4 {
                let row = mdp.next_dist(s, a);
                assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 3);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        assert!(mdp.r_min() >= 0.0 && mdp.r_max() < 1.0);
        assert!(make_garnet(3, 1, 4, 0.0, 0).is_err());
    }

    #[test]
    fn single_cell_grid_absorbs() {
        let spec = GridSpec {
            rows: 1,
            cols: 1,
            cell_rewards: vec![0.0],
            absorbing: vec![0],
            slip: 0.0,
            discount: 0.9,
        };
        let mdp = make_gridworld(&spec).unwrap();
        assert!(mdp.is_terminal(0));
        assert!((0..4).all(|a| mdp.next_dist(0, a) == [1.0]));
    }

    #[test]
    fn zero_slip_is_deterministic() {
        let mdp = make_chain(&[0.0, 1.0, 0.5], 0.0, 0.9).unwrap();
        assert!(mdp.is_deterministic());
        assert!(!make_chain(&[0.0, 1.0, 0.5], 0.1, 0.9).unwrap().is_deterministic());
    }

    #[test]
    fn grid_values_follow_shortest_paths() {
        // goal in the bottom-right corner, reward 1 for stepping onto it
        let goal = 8;
        let mut cell_rewards = vec![0.0; 9];
        cell_rewards[goal] = 1.0;
        let gamma = 0.9;
        let spec = GridSpec {
            rows: 3,
            cols: 3,
            cell_rewards,
            absorbing: vec![goal],
            slip: 0.0,
            discount: gamma,
        };
        let mdp = make_gridworld(&spec).unwrap();
        // BFS oracle over the deterministic move graph, backwards from the goal
        let mut dist = [usize::MAX; 9];
        let mut first_move = vec![0usize; 9];
        dist[goal] = 0;
        let mut queue = VecDeque::from([goal]);
        while let Some(t) = queue.pop_front() {
            for s in 0..9 {
                for a in 0..4 {
                    if dist[s] == usize::MAX && mdp.successor(s, a) == Some(t) {
                        dist[s] = dist[t] + 1;
                        first_move[s] = a;
                        queue.push_back(s);
                    }
                }
            }
        }
        let pol = Policy::deterministic(4, &first_move).unwrap();
        let v = policy_evaluation(&mdp, &pol, 1e-12).unwrap().v;
        for s in 0..9 {
            let expected = if s == goal { 0.0 } else { gamma.powi(dist[s] as i32 - 1) };
            assert!((v[s] - expected).abs() < 1e-10, "state {s}: {} vs {expected}", v[s]);
        }
    }
}
