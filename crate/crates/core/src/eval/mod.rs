//! Checks of measurements against their defining operator: residuals, errors,
//! the constructed zero-residual counterexample, the finite-dataset gap
//! experiment, and the aggregation value bound.

mod aggregate;
mod gap_experiment;
mod planted;

pub use aggregate::{aggregate, value_bound_check, Aggregation, ValueBoundReport};
pub use gap_experiment::{appendix_i_experiment, fit_dataset_residual, GapExperimentConfig, ResidualFit};
pub use planted::{prop4_construct, PlantedConstruction};

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::bisim::{abs_diff, scaled_fixed_point, Measurement, ScalingConfig};
use crate::dataset::OfflineDataset;
use crate::error::{invalid, Result};
use crate::mdp::{Policy, TabularMdp};

/// Solver tolerance for reference fixed points inside the checks.
pub const REFERENCE_TOL: f64 = 1e-12;

fn check_size(g: &Measurement, n: usize) -> Result<()> {
    if g.n() != n {
        return Err(invalid(format!("measurement is {}x{0}, expected {n}x{n}", g.n())));
    }
    Ok(())
}

/// `g - (c_r |r_i - r_j| + c_k E[g(s'_i, s'_j)])` with independent next states.
pub fn signed_residual_table(g: &Measurement, mdp: &TabularMdp, policy: &Policy, scaling: ScalingConfig) -> Result<DMatrix<f64>> {
    scaling.validate()?;
    check_size(g, mdp.n_states())?;
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_matrix(policy)?;
    let target = abs_diff(&r) * scaling.c_r + &p * &g.g * p.transpose() * scaling.c_k;
    Ok(&g.g - target)
}

/// Absolute Bellman residual of `g` on the MDP.
pub fn residual_table(g: &Measurement, mdp: &TabularMdp, policy: &Policy, scaling: ScalingConfig) -> Result<DMatrix<f64>> {
    Ok(signed_residual_table(g, mdp, policy, scaling)?.abs())
}

/// `|g - g_fixed|` entrywise.
pub fn error_table(g: &Measurement, g_fixed: &Measurement) -> Result<DMatrix<f64>> {
    check_size(g, g_fixed.n())?;
    Ok((&g.g - &g_fixed.g).abs())
}

/// Tuples that behave identically in every pair, with their multiplicity.
pub(crate) fn tuple_groups(ds: &OfflineDataset) -> Vec<((usize, f64, usize, bool), f64)> {
    let mut groups: BTreeMap<(usize, u64, usize, bool), f64> = BTreeMap::new();
    for t in ds.transitions() {
        *groups.entry((t.s, t.r.to_bits(), t.s_next, t.done)).or_default() += 1.0;
    }
    groups
        .into_iter()
        .map(|((s, r, t, d), w)| ((s, f64::from_bits(r), t, d), w))
        .collect()
}

/// Residual statistics over all ordered pairs of dataset tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetResidual {
    pub mean: f64,
    pub mean_sq: f64,
    pub max_abs: f64,
    /// Root-mean-square residual per source-state pair; zero where no tuple pair exists.
    pub by_state_pair: DMatrix<f64>,
}

/// Per-tuple residuals `c_r |r_i - r_j| + c_k g(s'_i, s'_j) - g(s_i, s_j)`,
/// with no continuation past a `done` tuple.
pub fn dataset_residual(g: &Measurement, ds: &OfflineDataset, scaling: ScalingConfig) -> Result<DatasetResidual> {
    scaling.validate()?;
    check_size(g, ds.n_states())?;
    let groups = tuple_groups(ds);
    let n = ds.n_states();
    let mut sq = DMatrix::<f64>::zeros(n, n);
    let mut counts = DMatrix::<f64>::zeros(n, n);
    let (mut sum, mut sum_sq, mut max_abs) = (0.0, 0.0, 0.0f64);
    for &((si, ri, ni, di), wi) in &groups {
        for &((sj, rj, nj, dj), wj) in &groups {
            let cont = if di || dj { 0.0 } else { scaling.c_k };
            let eps = scaling.c_r * (ri - rj).abs() + cont * g.g[(ni, nj)] - g.g[(si, sj)];
            let w = wi * wj;
            sum += w * eps;
            sum_sq += w * eps * eps;
            max_abs = max_abs.max(eps.abs());
            sq[(si, sj)] += w * eps * eps;
            counts[(si, sj)] += w;
        }
    }
    let total = (ds.len() * ds.len()) as f64;
    let by_state_pair = DMatrix::from_fn(n, n, |i, j| {
        if counts[(i, j)] > 0.0 {
            (sq[(i, j)] / counts[(i, j)]).sqrt()
        } else {
            0.0
        }
    });
    Ok(DatasetResidual {
        mean: sum / total,
        mean_sq: sum_sq / total,
        max_abs,
        by_state_pair,
    })
}

/// Mean of `(g - g_fixed)^2` over all ordered pairs of dataset tuples.
pub fn dataset_error(g: &Measurement, g_fixed: &Measurement, ds: &OfflineDataset) -> Result<f64> {
    check_size(g, ds.n_states())?;
    check_size(g_fixed, ds.n_states())?;
    let mut counts = vec![0.0; ds.n_states()];
    for t in ds.transitions() {
        counts[t.s] += 1.0;
    }
    let mut acc = 0.0;
    for (i, &wi) in counts.iter().enumerate().filter(|(_, &w)| w > 0.0) {
        for (j, &wj) in counts.iter().enumerate().filter(|(_, &w)| w > 0.0) {
            let d = g.g[(i, j)] - g_fixed.g[(i, j)];
            acc += wi * wj * d * d;
        }
    }
    Ok(acc / (ds.len() * ds.len()) as f64)
}

/// Residual and error of one measurement on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub dataset_id: String,
    pub measurement_id: String,
    pub n_transitions: usize,
    pub mean_sq_residual: f64,
    pub mean_sq_error: f64,
    /// Whether the residual minimizer reached its threshold.
    pub converged: bool,
    pub iterations: usize,
    /// RMS residual per state pair.
    pub epsilon: DMatrix<f64>,
    /// `|g - g_fixed|` per state pair.
    pub delta: DMatrix<f64>,
}

impl ResidualReport {
    /// Error over residual; infinite when the residual is exactly zero and the error is not.
    pub fn ratio(&self) -> f64 {
        if self.mean_sq_residual == 0.0 {
            if self.mean_sq_error == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mean_sq_error / self.mean_sq_residual
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    /// `max |eps - (Delta - c_k E[Delta'])|` over pairs, all signed.
    pub max_identity_violation: f64,
    pub max_abs_error: f64,
    pub max_abs_residual: f64,
    /// `max |eps| / (1 - c_k)`.
    pub sup_bound: f64,
    pub bound_holds: bool,
    pub pass: bool,
}

/// Signed residual versus signed error against the exact fixed point:
/// `eps = Delta - c_k P Delta P^T`, and its consequence
/// `max |Delta| <= max |eps| / (1 - c_k)`.
pub fn residual_error_identity_check(
    g: &Measurement,
    mdp: &TabularMdp,
    policy: &Policy,
    scaling: ScalingConfig,
) -> Result<IdentityReport> {
    let fixed = scaled_fixed_point(mdp, policy, scaling, REFERENCE_TOL)?;
    let eps = signed_residual_table(g, mdp, policy, scaling)?;
    let delta = &g.g - &fixed.g;
    let p = mdp.policy_matrix(policy)?;
    let rhs = &delta - (&p * &delta * p.transpose()) * scaling.c_k;
    let max_identity_violation = (&eps - rhs).amax();
    let max_abs_error = delta.amax();
    let max_abs_residual = eps.amax();
    let sup_bound = max_abs_residual / (1.0 - scaling.c_k);
    let bound_holds = max_abs_error <= sup_bound + 1e-8;
    Ok(IdentityReport {
        max_identity_violation,
        max_abs_error,
        max_abs_residual,
        sup_bound,
        bound_holds,
        pass: bound_holds && max_identity_violation <= 1e-8,
    })
}
