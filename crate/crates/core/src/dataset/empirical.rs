use super::OfflineDataset;
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

/// Maximum-likelihood model of a dataset. Pairs never seen in the data are
/// flagged and never filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMdp {
    n_states: usize,
    n_actions: usize,
    counts: Vec<usize>,
    transition: Vec<f64>,
    /// Like `transition` but only over tuples that are not `done`.
    continuation: Vec<f64>,
    reward: Vec<f64>,
    policy: Vec<f64>,
    state_support: Vec<bool>,
}

impl EmpiricalMdp {
    pub(crate) fn from_dataset(ds: &OfflineDataset) -> Self {
        let (n, m) = (ds.n_states(), ds.n_actions());
        let mut counts = vec![0usize; n * m];
        let mut transition = vec![0.0; n * m * n];
        let mut continuation = vec![0.0; n * m * n];
        let mut reward = vec![0.0; n * m];
        for t in ds.transitions() {
            let k = t.s * m + t.a;
            counts[k] += 1;
            reward[k] += t.r;
            transition[k * n + t.s_next] += 1.0;
            if !t.done {
                continuation[k * n + t.s_next] += 1.0;
            }
        }
        let mut policy = vec![0.0; n * m];
        let mut state_support = vec![false; n];
        for s in 0..n {
            let total: usize = counts[s * m..(s + 1) * m].iter().sum();
            state_support[s] = total > 0;
            for a in 0..m {
                let k = s * m + a;
                if counts[k] == 0 {
                    continue;
                }
                let c = counts[k] as f64;
                policy[k] = c / total as f64;
                reward[k] /= c;
                for t in 0..n {
                    transition[k * n + t] /= c;
                    continuation[k * n + t] /= c;
                }
            }
        }
        Self {
            n_states: n,
            n_actions: m,
            counts,
            transition,
            continuation,
            reward,
            policy,
            state_support,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn count(&self, s: usize, a: usize) -> usize {
        self.counts[s * self.n_actions + a]
    }

    pub fn is_supported(&self, s: usize, a: usize) -> bool {
        self.count(s, a) > 0
    }

    /// The state appears as the source of at least one tuple.
    pub fn state_supported(&self, s: usize) -> bool {
        self.state_support[s]
    }

    fn check(&self, s: usize, a: usize) -> Result<usize> {
        if self.is_supported(s, a) {
            Ok(s * self.n_actions + a)
        } else {
            Err(Error::OutOfSupport { state: s, action: a })
        }
    }

    pub fn next_dist(&self, s: usize, a: usize) -> Result<&[f64]> {
        let k = self.check(s, a)?;
        Ok(&self.transition[k * self.n_states..(k + 1) * self.n_states])
    }

    pub fn reward(&self, s: usize, a: usize) -> Result<f64> {
        Ok(self.reward[self.check(s, a)?])
    }

    /// Next-state weights that keep bootstrapping; all zeros off support.
    pub fn continuation(&self, s: usize, a: usize) -> &[f64] {
        let k = s * self.n_actions + a;
        &self.continuation[k * self.n_states..(k + 1) * self.n_states]
    }

    /// Mean reward table with zeros off support.
    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// `pi_hat(a|s)`; zero for states absent from the data.
    pub fn policy_prob(&self, s: usize, a: usize) -> f64 {
        self.policy[s * self.n_actions + a]
    }

    /// Supported actions at `s`.
    pub fn actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.is_supported(s, a))
    }

    /// The model as a full MDP plus `pi_hat`; fails unless every pair was seen.
    pub fn to_tabular(&self, discount: f64) -> Result<(TabularMdp, Policy)> {
        if let Some(k) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::OutOfSupport {
                state: k / self.n_actions,
                action: k % self.n_actions,
            });
        }
        let mdp = TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            discount,
        )?;
        let pol = Policy::new(self.n_states, self.n_actions, self.policy.clone())?;
        Ok((mdp, pol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;

    fn tup(s: usize, a: usize, r: f64, s_next: usize) -> Transition {
        Transition {
            s,
            a,
            r,
            s_next,
            done: false,
        }
    }

    #[test]
    fn counts_split_evenly() {
        let ds = OfflineDataset::new(3, 2, "t", vec![tup(0, 0, 1.0, 1), tup(0, 0, 3.0, 2)]).unwrap();
        let e = ds.empirical_mdp();
        assert_eq!(e.next_dist(0, 0).unwrap(), [0.0, 0.5, 0.5]);
        assert_eq!(e.reward(0, 0).unwrap(), 2.0);
        assert_eq!(e.policy_prob(0, 0), 1.0);
        assert!(matches!(e.next_dist(0, 1), Err(Error::OutOfSupport { state: 0, action: 1 })));
        assert!(!e.state_supported(1));
        assert!(e.to_tabular(0.9).is_err());
    }

    #[test]
    fn done_tuples_stop_continuation() {
        let mut t = tup(0, 0, 0.0, 1);
        t.done = true;
        let ds = OfflineDataset::new(2, 1, "t", vec![t, tup(0, 0, 0.0, 1)]).unwrap();
        let e = ds.empirical_mdp();
        assert_eq!(e.next_dist(0, 0).unwrap(), [0.0, 1.0]);
        assert_eq!(e.continuation(0, 0), [0.0, 0.5]);
    }
}
