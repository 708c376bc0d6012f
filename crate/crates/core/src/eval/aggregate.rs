use crate::bisim::{Measurement, ScalingConfig};
use crate::error::{invalid, Result};
use crate::mdp::{policy_evaluation, Policy, TabularMdp, EVAL_TOL};

/// Quotient of an MDP under a clustering of its states.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub omega: f64,
    pub cluster_of: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    /// Single-action MDP on clusters with member-averaged on-policy rewards and transitions.
    pub mdp: TabularMdp,
    /// `sup |g_fixed - g_phi|` once a reference is supplied.
    pub delta_hat: Option<f64>,
}

impl Aggregation {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Records `sup |g_fixed - g_phi|` over all pairs.
    pub fn with_reference(mut self, g_fixed: &Measurement, g_phi: &Measurement) -> Result<Self> {
        if g_fixed.n() != g_phi.n() {
            return Err(invalid("measurements differ in size"));
        }
        self.delta_hat = Some(g_fixed.sup_distance(g_phi));
        Ok(self)
    }
}

/// Greedy clustering in index order: a state joins the first cluster whose
/// representative (first member) is within `omega` and whose members are all
/// within `2 omega`; otherwise it opens a cluster. The quotient averages the
/// on-policy rewards and transitions of each cluster's members uniformly.
pub fn aggregate(g: &Measurement, omega: f64, mdp: &TabularMdp, policy: &Policy) -> Result<Aggregation> {
    let n = mdp.n_states();
    if g.n() != n {
        return Err(invalid("measurement size does not match the MDP"));
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(invalid(format!("omega = {omega} must be finite and nonnegative")));
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster_of = vec![0; n];
    for s in 0..n {
        let home = clusters.iter().position(|c| {
            let rep = c[0];
            g.g[(s, rep)].max(g.g[(rep, s)]) <= omega
                && c.iter().all(|&t| g.g[(s, t)].max(g.g[(t, s)]) <= 2.0 * omega)
        });
        match home {
            Some(k) => {
                clusters[k].push(s);
                cluster_of[s] = k;
            }
            None => {
                cluster_of[s] = clusters.len();
                clusters.push(vec![s]);
            }
        }
    }
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_matrix(policy)?;
    let k = clusters.len();
    let mut trans = vec![0.0; k * k];
    let mut reward = vec![0.0; k];
    for (c, members) in clusters.iter().enumerate() {
        let w = 1.0 / members.len() as f64;
        for &s in members {
            reward[c] += w * r[s];
            for t in 0..n {
                trans[c * k + cluster_of[t]] += w * p[(s, t)];
            }
        }
        // absorb rounding so the row is exactly stochastic
        let sum: f64 = trans[c * k..(c + 1) * k].iter().sum();
        trans[c * k..(c + 1) * k].iter_mut().for_each(|x| *x /= sum);
    }
    Ok(Aggregation {
        omega,
        cluster_of,
        clusters,
        mdp: TabularMdp::new(k, 1, trans, reward, mdp.discount())?,
        delta_hat: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueBoundReport {
    pub omega: f64,
    pub delta_hat: f64,
    pub n_clusters: usize,
    /// `max_s |V(s) - V~(cluster(s))|`.
    pub max_gap: f64,
    /// `(2 omega + delta_hat) / (c_r (1 - gamma))`.
    pub bound: f64,
    pub violations: usize,
}

/// Checks `|V(s) - V~(cluster(s))| <= (2 omega + delta_hat) / (c_r (1 - gamma)) + 1e-8`
/// with `delta_hat = sup |g_fixed - g_phi|`. Rewards must lie in `[0, 1]` and
/// `c_k >= gamma`, so that `c_r |V_i - V_j|` is dominated by the fixed point.
pub fn value_bound_check(
    mdp: &TabularMdp,
    policy: &Policy,
    agg: &Aggregation,
    g_fixed: &Measurement,
    g_phi: &Measurement,
    scaling: ScalingConfig,
) -> Result<ValueBoundReport> {
    scaling.validate()?;
    if mdp.r_min() < 0.0 || mdp.r_max() > 1.0 {
        return Err(invalid("rewards must be min-max normalized into [0, 1]"));
    }
    if scaling.c_r <= 0.0 || scaling.c_k < mdp.discount() {
        return Err(invalid("the bound needs c_r > 0 and c_k >= gamma"));
    }
    if agg.cluster_of.len() != mdp.n_states() {
        return Err(invalid("aggregation does not match the MDP"));
    }
    let delta_hat = g_fixed.sup_distance(g_phi);
    let v = policy_evaluation(mdp, policy, EVAL_TOL)?.v;
    let vt = policy_evaluation(&agg.mdp, &Policy::uniform(agg.n_clusters(), 1), EVAL_TOL)?.v;
    let bound = (2.0 * agg.omega + delta_hat) / (scaling.c_r * (1.0 - mdp.discount()));
    let gaps: Vec<f64> = (0..mdp.n_states()).map(|s| (v[s] - vt[agg.cluster_of[s]]).abs()).collect();
    Ok(ValueBoundReport {
        omega: agg.omega,
        delta_hat,
        n_clusters: agg.n_clusters(),
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        bound,
        violations: gaps.iter().filter(|&&x| x > bound + 1e-8).count(),
    })
}
