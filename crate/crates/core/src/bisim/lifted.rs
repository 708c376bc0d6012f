use nalgebra::DMatrix;

use super::ScalingConfig;
use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

/// Default cap on the number of paired states.
pub const DEFAULT_LIFT_CAP: usize = 400;

/// Product MDP over state pairs. Pair `(i, j)` is state `i * n + j`; action
/// pair `(a, b)` is action `a * m + b`.
#[derive(Debug, Clone)]
pub struct LiftedMdp {
    pub mdp: TabularMdp,
    /// `pi~((a, b) | (i, j)) = pi(a|i) pi(b|j)`.
    pub policy: Policy,
    pub base_states: usize,
}

pub fn lifted_index(n: usize, i: usize, j: usize) -> usize {
    i * n + j
}

impl LiftedMdp {
    /// Folds a value vector on pairs back into an `n x n` table.
    pub fn unmap(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.base_states;
        DMatrix::from_fn(n, n, |i, j| v[lifted_index(n, i, j)])
    }
}

/// Lifted MDP with reward `c_r |r^pi_i - r^pi_j|` and discount `c_k`.
pub fn build_lifted_mdp(
    mdp: &TabularMdp,
    policy: &Policy,
    scaling: ScalingConfig,
    cap: usize,
) -> Result<LiftedMdp> {
    scaling.validate()?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    if n * n > cap {
        return Err(Error::Size(format!("{} paired states exceed the cap of {cap}", n * n)));
    }
    let r = mdp.policy_reward(policy)?;
    let (nn, mm) = (n * n, m * m);
    let mut transition = vec![0.0; nn * mm * nn];
    let mut reward = Vec::with_capacity(nn * mm);
    let mut probs = Vec::with_capacity(nn * mm);
    for i in 0..n {
        for j in 0..n {
            let x = lifted_index(n, i, j);
            let rx = scaling.c_r * (r[i] - r[j]).abs();
            for a in 0..m {
                for b in 0..m {
                    let u = a * m + b;
                    reward.push(rx);
                    probs.push(policy.prob(i, a) * policy.prob(j, b));
                    let row = &mut transition[(x * mm + u) * nn..][..nn];
                    let (ti, tj) = (mdp.next_dist(i, a), mdp.next_dist(j, b));
                    for (si, &pi) in ti.iter().enumerate() {
                        if pi == 0.0 {
                            continue;
                        }
                        for (sj, &pj) in tj.iter().enumerate() {
                            row[lifted_index(n, si, sj)] = pi * pj;
                        }
                    }
                }
            }
        }
    }
    Ok(LiftedMdp {
        mdp: TabularMdp::new(nn, mm, transition, reward, scaling.c_k)?,
        policy: Policy::new(nn, mm, probs)?,
        base_states: n,
    })
}
