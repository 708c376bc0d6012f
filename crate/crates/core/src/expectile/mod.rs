//! The expectile-weighted bisimulation update and its fixed points.
//!
//! One sweep moves every pair by
//! `2 alpha E_{a_i, a_j}[tau [eps]_+ + (1 - tau) [eps]_-]`, where
//! `eps = target(a_i, a_j) - G` and the target is
//! `c_r |reward gap| + c_k E[G(s'_i, s'_j) | a_i, a_j]`. The next-state expectation
//! sits inside `eps`; the asymmetric weights act outside the action expectation.

mod probes;

pub use probes::{
    contraction_probe, lipschitz_ratio, monotonicity_probe, random_measurement, tau_limit_probe, ContractionReport,
    TauLimitReport,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bisim::{iterate, FixedPointRun, Measurement, MeasurementKind, OperatorModel, ScalingConfig};
use crate::dataset::OfflineDataset;
use crate::error::{invalid, Result};
use crate::mdp::{Policy, TabularMdp};

/// Which reward gap enters the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTerm {
    /// `|r^pi(s_i) - r^pi(s_j)|`; the `tau = 0.5` fixed point is then the scaled fixed point.
    PolicyMean,
    /// `|r(s_i, a_i) - r(s_j, a_j)|`; as `tau -> 1` the fixed point approaches the in-sample maximum.
    PerAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpectileConfig {
    pub tau: f64,
    pub alpha: f64,
    pub scaling: ScalingConfig,
    pub tol: f64,
    pub max_sweeps: usize,
    pub reward_term: RewardTerm,
}

impl Default for ExpectileConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            alpha: 0.3,
            scaling: ScalingConfig::standard(0.9),
            tol: 1e-9,
            max_sweeps: 1_000_000,
            reward_term: RewardTerm::PolicyMean,
        }
    }
}

impl ExpectileConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(invalid(format!("alpha = {} outside (0, 0.5]", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tolerance {} must be positive", self.tol)));
        }
        self.scaling.validate()
    }

    /// Contraction modulus `1 - 2 alpha (1 - c_k) min(tau, 1 - tau)`.
    pub fn gamma_tau(&self) -> f64 {
        1.0 - 2.0 * self.alpha * (1.0 - self.scaling.c_k) * self.tau.min(1.0 - self.tau)
    }
}

/// Asymmetric weighting `tau [x]_+ + (1 - tau) [x]_-`.
pub fn asymmetric(x: f64, tau: f64) -> f64 {
    if x > 0.0 {
        tau * x
    } else {
        (1.0 - tau) * x
    }
}

/// The `tau`-expectile of a weighted sample: the root of
/// `tau E[(x - m)_+] = (1 - tau) E[(m - x)_+]`, found by bisection.
pub fn expectile_scalar(values: &[f64], weights: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(invalid("need matching nonempty values and weights"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau = {tau} outside (0, 1)")));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(invalid("weights must be nonnegative and sum to 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values must be finite"));
    }
    let foc = |m: f64| -> f64 {
        values
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * asymmetric(x - m, tau))
            .sum()
    };
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    // foc is nonincreasing: >= 0 at the minimum, <= 0 at the maximum
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One residual of the exact operator: a state pair under an action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub pair: (usize, usize),
    pub actions: (usize, usize),
    /// Weight `pi(a_i|s_i) pi(a_j|s_j)`.
    pub weight: f64,
    pub epsilon_hat: f64,
}

/// `eps_hat` for every state pair and every weighted action pair.
pub fn residual_samples(model: &OperatorModel, g: &DMatrix<f64>, cfg: &ExpectileConfig) -> Vec<ResidualSample> {
    let mut out = Vec::new();
    for_each_residual(model, g, cfg, |i, j, a, b, w, eps| {
        out.push(ResidualSample {
            pair: (i, j),
            actions: (a, b),
            weight: w,
            epsilon_hat: eps,
        })
    });
    out
}

fn for_each_residual(
    model: &OperatorModel,
    g: &DMatrix<f64>,
    cfg: &ExpectileConfig,
    mut f: impl FnMut(usize, usize, usize, usize, f64, f64),
) {
    let (n, m) = (model.n_states(), model.n_actions());
    let r_pi = model.policy_reward();
    let s = cfg.scaling;
    for a in 0..m {
        let ga = model.cont(a) * g;
        for b in 0..m {
            let e = &ga * model.cont(b).transpose();
            for i in 0..n {
                let wi = model.policy_prob(i, a);
                if wi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let w = wi * model.policy_prob(j, b);
                    if w == 0.0 {
                        continue;
                    }
                    let gap = match cfg.reward_term {
                        RewardTerm::PolicyMean => (r_pi[i] - r_pi[j]).abs(),
                        RewardTerm::PerAction => (model.reward(i, a) - model.reward(j, b)).abs(),
                    };
                    f(i, j, a, b, w, s.c_r * gap + s.c_k * e[(i, j)] - g[(i, j)]);
                }
            }
        }
    }
}

/// One synchronous expectile sweep. Pairs touching an unsupported state are reset to zero.
pub fn expectile_sweep(g: &DMatrix<f64>, model: &OperatorModel, cfg: &ExpectileConfig) -> DMatrix<f64> {
    let mut step = DMatrix::zeros(g.nrows(), g.ncols());
    for_each_residual(model, g, cfg, |i, j, _, _, w, eps| {
        step[(i, j)] += w * asymmetric(eps, cfg.tau);
    });
    model.finish(g + step * (2.0 * cfg.alpha))
}

/// `G_tau` on an operator model, with the sweep-change history.
pub fn expectile_fixed_point_model(model: &OperatorModel, cfg: &ExpectileConfig) -> Result<FixedPointRun> {
    cfg.validate()?;
    let (g, history) = iterate(model.n_states(), cfg.tol, cfg.max_sweeps, |g| Ok(expectile_sweep(g, model, cfg)))?;
    Ok(FixedPointRun {
        measurement: Measurement::new(g, MeasurementKind::Expectile).with_scaling(cfg.scaling),
        sweeps: history.len(),
        history,
    })
}

/// `G_tau` for an MDP under a policy (action expectation taken exactly).
pub fn expectile_fixed_point(mdp: &TabularMdp, policy: &Policy, cfg: &ExpectileConfig) -> Result<Measurement> {
    let model = OperatorModel::from_mdp(mdp, policy)?;
    Ok(expectile_fixed_point_model(&model, cfg)?.measurement)
}

/// `G_tau` on a dataset's empirical model under its empirical behavior policy.
pub fn expectile_fixed_point_dataset(ds: &OfflineDataset, cfg: &ExpectileConfig) -> Result<Measurement> {
    Ok(expectile_fixed_point_model(&OperatorModel::from_dataset(ds), cfg)?.measurement)
}
