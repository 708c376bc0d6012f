use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;

use super::{dataset_error, dataset_residual, tuple_groups, ResidualReport, REFERENCE_TOL};
use crate::bisim::{scaled_fixed_point, Measurement, MeasurementKind, ScalingConfig};
use crate::dataset::{collect, mdp_id, remove_transitions, OfflineDataset, RemovalRule};
use crate::error::{invalid, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GapExperimentConfig {
    /// Transitions collected per dataset, one report each.
    pub sizes: Vec<usize>,
    pub horizon: usize,
    pub drop: Option<RemovalRule>,
    pub scaling: ScalingConfig,
    /// Stop once the mean squared residual falls below this.
    pub threshold: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GapExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2000],
            horizon: 50,
            drop: Some(RemovalRule::DropRandomNextStates(0.3)),
            scaling: ScalingConfig::reward_scaled(0.9),
            threshold: 1e-4,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResidualFit {
    pub measurement: Measurement,
    pub iterations: usize,
    pub mean_sq_residual: f64,
    pub converged: bool,
}

/// Minimizes the mean squared per-tuple residual over the dataset's state
/// pairs. Each sweep replaces `g(s_i, s_j)` by the average target of the tuple
/// pairs starting there, which is the least-squares fit with targets held
/// fixed. Pairs the data never starts from keep their initial zero.
pub fn fit_dataset_residual(ds: &OfflineDataset, scaling: ScalingConfig, threshold: f64, max_iters: usize) -> Result<ResidualFit> {
    scaling.validate()?;
    if !(threshold > 0.0) {
        return Err(invalid("residual threshold must be positive"));
    }
    let n = ds.n_states();
    let groups = tuple_groups(ds);
    let mut g = Measurement::zeros(n, MeasurementKind::Learned).with_scaling(scaling);
    let mut residual = dataset_residual(&g, ds, scaling)?.mean_sq;
    let mut iterations = 0;
    while residual >= threshold && iterations < max_iters {
        let mut sum = DMatrix::<f64>::zeros(n, n);
        let mut weight = DMatrix::<f64>::zeros(n, n);
        for &((si, ri, ni, di), wi) in &groups {
            for &((sj, rj, nj, dj), wj) in &groups {
                let cont = if di || dj { 0.0 } else { scaling.c_k };
                sum[(si, sj)] += wi * wj * (scaling.c_r * (ri - rj).abs() + cont * g.g[(ni, nj)]);
                weight[(si, sj)] += wi * wj;
            }
        }
        for k in 0..n * n {
            if weight[k] > 0.0 {
                g.g[k] = sum[k] / weight[k];
            }
        }
        iterations += 1;
        residual = dataset_residual(&g, ds, scaling)?.mean_sq;
        if !residual.is_finite() {
            break;
        }
    }
    Ok(ResidualFit {
        converged: residual < threshold,
        measurement: g,
        iterations,
        mean_sq_residual: residual,
    })
}

/// Collects one dataset per size, removes tuples, fits the residual, and
/// measures the squared error against the fixed point of the full MDP under the
/// behavior policy. Both averages run over all ordered pairs of dataset tuples.
///
/// Dataset `k` is collected and thinned with seeds drawn from the
/// `(seed, "appendix-i", k)` stream.
pub fn appendix_i_experiment(mdp: &TabularMdp, behavior: &Policy, cfg: &GapExperimentConfig) -> Result<Vec<ResidualReport>> {
    let g_fixed = scaled_fixed_point(mdp, behavior, cfg.scaling, REFERENCE_TOL)?;
    let source = mdp_id(mdp);
    cfg.sizes
        .par_iter()
        .enumerate()
        .map(|(k, &size)| {
            let mut g = rng::stream(cfg.seed, "appendix-i", k as u64);
            let (collect_seed, drop_seed) = (g.random::<u64>(), g.random::<u64>());
            let full = collect(mdp, behavior, size, cfg.horizon, collect_seed)?;
            let ds = match &cfg.drop {
                Some(rule) => remove_transitions(&full, rule, drop_seed)?,
                None => full,
            };
            let fit = fit_dataset_residual(&ds, cfg.scaling, cfg.threshold, cfg.max_iters)?;
            let residual = dataset_residual(&fit.measurement, &ds, cfg.scaling)?;
            Ok(ResidualReport {
                dataset_id: format!("{source}-n{size}-k{k}"),
                measurement_id: format!("{}-fit", fit.measurement.kind),
                n_transitions: ds.len(),
                mean_sq_residual: fit.mean_sq_residual,
                mean_sq_error: dataset_error(&fit.measurement, &g_fixed, &ds)?,
                converged: fit.converged,
                iterations: fit.iterations,
                epsilon: residual.by_state_pair,
                delta: (&fit.measurement.g - &g_fixed.g).abs(),
            })
        })
        .collect()
}
