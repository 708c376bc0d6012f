//! Offline datasets: rollouts under a behavior policy, deliberate removal of
//! tuples, and min-max reward normalization.
//!
//! Tuples inside one episode are Markov-dependent; only whole episodes are
//! independent draws.

mod empirical;
mod text;

pub use empirical::EmpiricalMdp;
pub use text::{dataset_from_text, dataset_to_text};

use std::collections::BTreeSet;

use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::mdp::{mdp_to_text, Policy, TabularMdp};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// The next state is terminal: no bootstrapping past it.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Transition>,
    source_id: String,
    reward_stats: (f64, f64),
    /// `(lo, hi)` of the affine map applied by [`OfflineDataset::minmax_normalize`].
    normalization: Option<(f64, f64)>,
    /// States that stopped appearing as next states after removals.
    missing_next: Vec<usize>,
}

/// States and state-action pairs present in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub states: BTreeSet<usize>,
    pub next_states: BTreeSet<usize>,
    pub state_actions: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemovalRule {
    /// Drop `round(f * n)` uniformly chosen tuples.
    DropFraction(f64),
    /// Drop every tuple whose next state is in the set.
    DropNextStates(Vec<usize>),
    /// Drop every tuple whose source state is in the set.
    DropSourceStates(Vec<usize>),
    /// Pick `round(f * n_states)` states at random and drop every tuple leading into them.
    DropRandomNextStates(f64),
}

/// Short content hash of an MDP, used as a dataset's source id.
pub fn mdp_id(mdp: &TabularMdp) -> String {
    let digest = Sha256::digest(mdp_to_text(mdp).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver at the top; fall back to the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn reward_range(ts: &[Transition]) -> (f64, f64) {
    ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t.r), hi.max(t.r))
    })
}

impl OfflineDataset {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        source_id: impl Into<String>,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if source_id.is_empty() || source_id.chars().any(char::is_whitespace) {
            return Err(invalid(format!("source id `{source_id}` must be one nonempty word")));
        }
        if transitions.is_empty() {
            return Err(invalid("a dataset needs at least one transition"));
        }
        for (k, t) in transitions.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(invalid(format!("transition {k} has an index out of range")));
            }
            if !t.r.is_finite() {
                return Err(invalid(format!("transition {k} has a non-finite reward")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            reward_stats: reward_range(&transitions),
            transitions,
            source_id,
            normalization: None,
            missing_next: Vec::new(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// `(R_min, R_max)` of the raw rewards, kept through normalization.
    pub fn reward_stats(&self) -> (f64, f64) {
        self.reward_stats
    }

    pub fn normalization(&self) -> Option<(f64, f64)> {
        self.normalization
    }

    pub fn missing_next_states(&self) -> &[usize] {
        &self.missing_next
    }

    pub fn support(&self) -> SupportSet {
        SupportSet {
            states: self.transitions.iter().map(|t| t.s).collect(),
            next_states: self.transitions.iter().map(|t| t.s_next).collect(),
            state_actions: self.transitions.iter().map(|t| (t.s, t.a)).collect(),
        }
    }

    /// Rewards mapped affinely onto `[0, 1]`; constant rewards become zeros.
    pub fn minmax_normalize(&self) -> Self {
        let (lo, hi) = reward_range(&self.transitions);
        let mut out = self.clone();
        for t in &mut out.transitions {
            t.r = if hi > lo { (t.r - lo) / (hi - lo) } else { 0.0 };
        }
        out.normalization = Some(match self.normalization {
            // compose with an earlier map so denormalize still returns raw rewards
            Some((l0, h0)) => (l0 + lo * (h0 - l0), l0 + hi * (h0 - l0)),
            None => (lo, hi),
        });
        out
    }

    /// Inverse of [`OfflineDataset::minmax_normalize`]; a no-op on raw data.
    pub fn denormalize(&self) -> Self {
        let mut out = self.clone();
        if let Some((lo, hi)) = self.normalization {
            for t in &mut out.transitions {
                t.r = lo + t.r * (hi - lo);
            }
            out.normalization = None;
        }
        out
    }

    /// Same tuples with rewards replaced by `f(r)`; marks the result as raw data.
    pub fn map_rewards(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let ts = self.transitions.iter().map(|t| Transition { r: f(t.r), ..*t }).collect();
        let mut out = Self::new(self.n_states, self.n_actions, self.source_id.clone(), ts)?;
        out.missing_next = self.missing_next.clone();
        Ok(out)
    }

    pub fn empirical_mdp(&self) -> EmpiricalMdp {
        EmpiricalMdp::from_dataset(self)
    }
}

/// Episodic rollouts with uniform starts. See [`collect_from`].
pub fn collect(
    mdp: &TabularMdp,
    behavior: &Policy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let init = vec![1.0 / mdp.n_states() as f64; mdp.n_states()];
    collect_from(mdp, behavior, n, horizon, &init, seed)
}

/// `n` transitions from episodes started at `init`; an episode ends when it
/// reaches a terminal state (`done = true`) or after `horizon` steps (`done = false`).
pub fn collect_from(
    mdp: &TabularMdp,
    behavior: &Policy,
    n: usize,
    horizon: usize,
    init: &[f64],
    seed: u64,
) -> Result<OfflineDataset> {
    mdp.check_policy(behavior)?;
    if n == 0 || horizon == 0 {
        return Err(invalid("need n >= 1 and horizon >= 1"));
    }
    if init.len() != mdp.n_states() {
        return Err(invalid("initial distribution has the wrong length"));
    }
    let total: f64 = init.iter().sum();
    if init.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(invalid("initial distribution is not a probability vector"));
    }
    let mut g = rng::from_seed(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut s = sample_index(init, &mut g);
        for _ in 0..horizon {
            let a = sample_index(behavior.row(s), &mut g);
            let s_next = sample_index(mdp.next_dist(s, a), &mut g);
            let done = mdp.is_terminal(s_next);
            out.push(Transition {
                s,
                a,
                r: mdp.reward(s, a),
                s_next,
                done,
            });
            if done || out.len() == n {
                break;
            }
            s = s_next;
        }
    }
    OfflineDataset::new(mdp.n_states(), mdp.n_actions(), mdp_id(mdp), out)
}

/// Removes tuples per `rule`. Surviving tuples keep their order and content.
pub fn remove_transitions(ds: &OfflineDataset, rule: &RemovalRule, seed: u64) -> Result<OfflineDataset> {
    let n = ds.len();
    let keep: Vec<bool> = match rule {
        RemovalRule::DropFraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(invalid(format!("drop fraction {f} outside [0, 1]")));
            }
            let n_drop = (f * n as f64).round() as usize;
            let mut g = rng::stream(seed, "drop-fraction", 0);
            let mut idx: Vec<usize> = (0..n).collect();
            for k in 0..n_drop {
                let j = g.random_range(k..n);
                idx.swap(k, j);
            }
            let mut keep = vec![true; n];
            idx[..n_drop].iter().for_each(|&i| keep[i] = false);
            keep
        }
        RemovalRule::DropNextStates(set) => {
            let set: BTreeSet<usize> = set.iter().copied().collect();
            ds.transitions.iter().map(|t| !set.contains(&t.s_next)).collect()
        }
        RemovalRule::DropSourceStates(set) => {
            let set: BTreeSet<usize> = set.iter().copied().collect();
            ds.transitions.iter().map(|t| !set.contains(&t.s)).collect()
        }
        RemovalRule::DropRandomNextStates(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(invalid(format!("state fraction {f} outside [0, 1]")));
            }
            let states = random_state_subset(ds.n_states, *f, seed);
            return remove_transitions(ds, &RemovalRule::DropNextStates(states), seed);
        }
    };
    let survivors: Vec<Transition> = ds
        .transitions
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(t, _)| *t)
        .collect();
    if survivors.is_empty() {
        return Err(Error::Validation("removal left the dataset empty".into()));
    }
    let before = ds.support().next_states;
    let mut out = ds.clone();
    out.transitions = survivors;
    let after = out.support().next_states;
    let mut missing: BTreeSet<usize> = ds.missing_next.iter().copied().collect();
    missing.extend(before.difference(&after));
    out.missing_next = missing.into_iter().collect();
    Ok(out)
}

/// `round(f * n)` distinct states drawn from the `(seed, "drop-states")` stream, sorted.
pub fn random_state_subset(n_states: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = (fraction * n_states as f64).round() as usize;
    let mut g = rng::stream(seed, "drop-states", 0);
    let mut idx: Vec<usize> = (0..n_states).collect();
    for i in 0..k.min(n_states) {
        let j = g.random_range(i..n_states);
        idx.swap(i, j);
    }
    let mut out = idx[..k.min(n_states)].to_vec();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::make_garnet;
    use proptest::prelude::*;

    fn toy(rewards: &[f64]) -> OfflineDataset {
        let ts = rewards
            .iter()
            .enumerate()
            .map(|(k, &r)| Transition {
                s: k % 2,
                a: 0,
                r,
                s_next: (k + 1) % 2,
                done: false,
            })
            .collect();
        OfflineDataset::new(2, 1, "toy", ts).unwrap()
    }

    fn rewards(ds: &OfflineDataset) -> Vec<f64> {
        ds.transitions().iter().map(|t| t.r).collect()
    }

    #[test]
    fn self_loop_gives_identical_tuples() {
        let mdp = make_garnet(1, 1, 1, 0.0, 0).unwrap();
        let ds = collect(&mdp, &Policy::uniform(1, 1), 3, 10, 5).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.transitions().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn collect_is_seed_deterministic() {
        let mdp = make_garnet(6, 2, 2, 0.0, 1).unwrap();
        let pol = Policy::uniform(6, 2);
        assert_eq!(collect(&mdp, &pol, 200, 7, 3).unwrap(), collect(&mdp, &pol, 200, 7, 3).unwrap());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(rewards(&toy(&[2.0, 4.0, 6.0]).minmax_normalize()), [0.0, 0.5, 1.0]);
        assert_eq!(rewards(&toy(&[3.0, 3.0]).minmax_normalize()), [0.0, 0.0]);
        assert_eq!(rewards(&toy(&[0.0, 0.25, 1.0]).minmax_normalize()), [0.0, 0.25, 1.0]);
        let n = toy(&[2.0, 4.0]).minmax_normalize();
        assert_eq!(n.reward_stats(), (2.0, 4.0));
    }

    #[test]
    fn removal_examples() {
        let mdp = make_garnet(8, 2, 3, 0.0, 2).unwrap();
        let ds = collect(&mdp, &Policy::uniform(8, 2), 1000, 20, 1).unwrap();
        assert_eq!(remove_transitions(&ds, &RemovalRule::DropFraction(0.0), 7).unwrap().transitions(), ds.transitions());
        assert_eq!(remove_transitions(&ds, &RemovalRule::DropFraction(0.3), 7).unwrap().len(), 700);
        let cut = remove_transitions(&ds, &RemovalRule::DropNextStates(vec![4]), 7).unwrap();
        assert!(!cut.support().next_states.contains(&4));
        assert_eq!(cut.missing_next_states(), [4]);
        assert!(remove_transitions(&ds, &RemovalRule::DropFraction(1.0), 7).is_err());
    }

    #[test]
    fn empty_removal_is_an_error() {
        let ds = toy(&[1.0, 2.0]);
        assert!(remove_transitions(&ds, &RemovalRule::DropNextStates(vec![0, 1]), 0).is_err());
    }

    #[test]
    fn episodes_stop_at_terminals() {
        // 0 -> 1 -> 2, with 2 absorbing
        let t = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = TabularMdp::new(3, 1, t, vec![0.0; 3], 0.9).unwrap().with_terminals(&[2]).unwrap();
        let pol = Policy::uniform(3, 1);
        let ds = collect_from(&mdp, &pol, 50, 10, &[1.0, 0.0, 0.0], 0).unwrap();
        for pair in ds.transitions().chunks(2) {
            assert_eq!((pair[0].s, pair[0].done), (0, false));
            assert_eq!((pair[1].s_next, pair[1].done), (2, true));
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trips(seed in 0u64..500, scale in 0.1f64..50.0, shift in -20.0f64..20.0) {
            let mdp = make_garnet(5, 2, 2, 0.2, seed).unwrap().map_rewards(scale, shift);
            let ds = collect(&mdp, &Policy::uniform(5, 2), 100, 10, seed).unwrap();
            let norm = ds.minmax_normalize();
            prop_assert!(rewards(&norm).iter().all(|r| (0.0..=1.0).contains(r)));
            let back = norm.minmax_normalize().denormalize();
            for (x, y) in rewards(&back).iter().zip(rewards(&ds)) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn removal_preserves_survivors(seed in 0u64..500, f in 0.0f64..0.9) {
            let mdp = make_garnet(6, 2, 3, 0.0, seed).unwrap();
            let ds = collect(&mdp, &Policy::uniform(6, 2), 200, 10, seed).unwrap();
            let cut = remove_transitions(&ds, &RemovalRule::DropFraction(f), seed).unwrap();
            // survivors form an order-preserving subsequence of the original
            let mut it = ds.transitions().iter();
            for t in cut.transitions() {
                prop_assert!(it.any(|u| u == t));
            }
        }
    }
}
