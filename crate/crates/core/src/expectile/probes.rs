use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;

use super::{expectile_fixed_point_model, expectile_sweep, ExpectileConfig, RewardTerm};
use crate::bisim::{g_star_fixed_point_model, sup_diff, Measurement, OperatorModel};
use crate::error::{invalid, Result};
use crate::report::ProbeRow;
use crate::rng;

/// Tolerance guaranteeing the solve is within `accuracy` of the true fixed point.
pub(crate) fn accurate_cfg(base: &ExpectileConfig, accuracy: f64) -> ExpectileConfig {
    let g = base.gamma_tau();
    ExpectileConfig {
        tol: base.tol.min(accuracy * (1.0 - g) / g),
        ..*base
    }
}

/// `||F G1 - F G2|| / ||G1 - G2||`, defined as 0 when `G1 = G2`.
pub fn lipschitz_ratio(model: &OperatorModel, cfg: &ExpectileConfig, g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> f64 {
    let d = sup_diff(g1, g2);
    if d == 0.0 {
        return 0.0;
    }
    sup_diff(&expectile_sweep(g1, model, cfg), &expectile_sweep(g2, model, cfg)) / d
}

/// Symmetric table with entries uniform in `[0, scale]`.
pub fn random_measurement(n: usize, scale: f64, rng: &mut rng::Rng) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = scale * rng.random::<f64>();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub gamma_tau: f64,
    pub ratios: Vec<f64>,
    pub row: ProbeRow,
}

/// Lipschitz ratios of one sweep over random pairs of bounded measurements.
/// Trial `k` draws from the `(seed, "contraction", k)` stream.
pub fn contraction_probe(cfg: &ExpectileConfig, model: &OperatorModel, n_trials: usize, seed: u64) -> Result<ContractionReport> {
    cfg.validate()?;
    let n = model.n_states();
    let rewards: Vec<f64> = (0..n)
        .flat_map(|s| (0..model.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| model.reward(s, a))
        .collect();
    let spread = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = cfg.scaling.bound(spread).max(1.0);
    let ratios: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut g = rng::stream(seed, "contraction", k as u64);
            let g1 = random_measurement(n, scale, &mut g);
            let g2 = random_measurement(n, scale, &mut g);
            lipschitz_ratio(model, cfg, &g1, &g2)
        })
        .collect();
    let gamma_tau = cfg.gamma_tau();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let row = ProbeRow::new(
        "contraction",
        &[
            ("tau", cfg.tau.to_string()),
            ("alpha", cfg.alpha.to_string()),
            ("c_k", cfg.scaling.c_k.to_string()),
            ("trials", n_trials.to_string()),
        ],
        worst - gamma_tau,
        worst <= gamma_tau + 1e-10,
    );
    Ok(ContractionReport { gamma_tau, ratios, row })
}

/// Solves `G_tau` for an ascending grid and checks `G_tau' >= G_tau - 1e-8` elementwise.
pub fn monotonicity_probe(model: &OperatorModel, tau_grid: &[f64], base: &ExpectileConfig) -> Result<(ProbeRow, Vec<Measurement>)> {
    if tau_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("tau grid must be strictly ascending"));
    }
    let solved: Vec<Measurement> = tau_grid
        .par_iter()
        .map(|&tau| {
            let cfg = accurate_cfg(&base.with_tau(tau), 1e-10);
            expectile_fixed_point_model(model, &cfg).map(|r| r.measurement)
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for w in solved.windows(2) {
        worst = worst.max((&w[0].g - &w[1].g).max());
    }
    let grid: Vec<String> = tau_grid.iter().map(|t| t.to_string()).collect();
    let row = ProbeRow::new(
        "monotonicity",
        &[("taus", grid.join("/")), ("c_k", base.scaling.c_k.to_string())],
        worst,
        worst <= 1e-8,
    );
    Ok((row, solved))
}

#[derive(Debug, Clone)]
pub struct TauLimitReport {
    pub taus: Vec<f64>,
    /// `||G_tau - max-over-support G*||` per tau, over supported pairs.
    pub errors: Vec<f64>,
    /// Largest `G_tau - max-over-support G*` seen; never positive up to solver accuracy.
    pub max_excess: f64,
    pub non_increasing: bool,
    pub row: ProbeRow,
}

/// Distance from `G_tau` (per-action reward gaps) to the in-sample maximum fixed
/// point along an increasing tau sequence. The model must be deterministic.
pub fn tau_limit_probe(model: &OperatorModel, taus: &[f64], base: &ExpectileConfig, threshold: f64) -> Result<TauLimitReport> {
    if !model.is_deterministic() {
        return Err(invalid("the tau-limit probe needs deterministic transitions"));
    }
    if taus.is_empty() || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("tau sequence must be nonempty and strictly increasing"));
    }
    let base = ExpectileConfig {
        reward_term: RewardTerm::PerAction,
        ..*base
    };
    let target = g_star_fixed_point_model(model, base.scaling, 1e-13)?.max_over_support();
    let n = model.n_states();
    let solved: Vec<Measurement> = taus
        .par_iter()
        .map(|&tau| {
            let cfg = accurate_cfg(&base.with_tau(tau), 1e-11);
            expectile_fixed_point_model(model, &cfg).map(|r| r.measurement)
        })
        .collect::<Result<_>>()?;
    let mut errors = Vec::with_capacity(taus.len());
    let mut max_excess = f64::NEG_INFINITY;
    for m in &solved {
        let mut err: f64 = 0.0;
        for i in (0..n).filter(|&i| model.is_supported(i)) {
            for j in (0..n).filter(|&j| model.is_supported(j)) {
                let d = m.g[(i, j)] - target.g[(i, j)];
                err = err.max(d.abs());
                max_excess = max_excess.max(d);
            }
        }
        errors.push(err);
    }
    let non_increasing = errors.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let last = *errors.last().unwrap_or(&0.0);
    let seq: Vec<String> = taus.iter().map(|t| t.to_string()).collect();
    let row = ProbeRow::new(
        "tau-limit",
        &[("taus", seq.join("/")), ("threshold", threshold.to_string())],
        last - threshold,
        non_increasing && last <= threshold,
    );
    Ok(TauLimitReport {
        taus: taus.to_vec(),
        errors,
        max_excess,
        non_increasing,
        row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bisim::ScalingConfig;
    use crate::mdp::{make_chain, make_garnet, Policy, TabularMdp};

    #[test]
    fn identical_inputs_have_ratio_zero() {
        let mdp = make_garnet(4, 2, 2, 0.0, 1).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(4, 2)).unwrap();
        let g = DMatrix::from_element(4, 4, 0.3);
        assert_eq!(lipschitz_ratio(&model, &ExpectileConfig::default(), &g, &g), 0.0);
    }

    #[test]
    fn contraction_holds_on_a_garnet() {
        let mdp = make_garnet(6, 3, 3, 0.0, 4).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(6, 3)).unwrap();
        let cfg = ExpectileConfig { alpha: 0.5, ..Default::default() };
        let rep = contraction_probe(&cfg, &model, 200, 9).unwrap();
        assert!((rep.gamma_tau - 0.95).abs() < 1e-15);
        assert!(rep.row.pass, "{:?}", rep.row);
    }

    #[test]
    fn singleton_grid_is_vacuous() {
        let mdp = make_garnet(4, 2, 2, 0.0, 1).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(4, 2)).unwrap();
        let (row, _) = monotonicity_probe(&model, &[0.5], &ExpectileConfig::default()).unwrap();
        assert!(row.pass && row.max_violation == 0.0);
    }

    #[test]
    fn zero_rewards_stay_zero_for_every_tau() {
        let mdp = make_garnet(5, 2, 2, 1.0, 6).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(5, 2)).unwrap();
        let (row, solved) = monotonicity_probe(&model, &[0.3, 0.5, 0.7], &ExpectileConfig::default()).unwrap();
        assert!(row.pass);
        assert!(solved.iter().all(|m| m.g.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_action_limit_is_exact() {
        let mdp = make_garnet(5, 1, 1, 0.0, 3).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(5, 1)).unwrap();
        let rep = tau_limit_probe(&model, &[0.6, 0.9], &ExpectileConfig::default(), 1e-8).unwrap();
        assert!(rep.errors.iter().all(|&e| e < 1e-8), "{:?}", rep.errors);
    }

    #[test]
    fn limit_errors_fall_on_a_chain() {
        let mdp = make_chain(&[0.0, 0.3, 1.0, 0.6], 0.0, 0.9).unwrap();
        // action-dependent rewards so the max over action pairs matters
        let r: Vec<f64> = (0..8).map(|k| if k % 2 == 0 { mdp.rewards()[k] } else { 0.5 * mdp.rewards()[k] }).collect();
        let t: Vec<f64> = (0..4).flat_map(|s| (0..2).flat_map(move |a| (0..4).map(move |t| (s, a, t)))).map(|(s, a, t)| mdp.next_dist(s, a)[t]).collect();
        let mdp = TabularMdp::new(4, 2, t, r, 0.9).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(4, 2)).unwrap();
        let base = ExpectileConfig { scaling: ScalingConfig::new(1.0, 0.5).unwrap(), ..Default::default() };
        let rep = tau_limit_probe(&model, &[0.9, 0.99, 0.999], &base, 0.05).unwrap();
        assert!(rep.errors.windows(2).all(|w| w[1] < w[0]), "{:?}", rep.errors);
        assert!(rep.row.pass);
        assert!(rep.max_excess <= 1e-9);
    }

    #[test]
    fn stochastic_model_is_rejected() {
        let mdp = make_garnet(4, 2, 2, 0.0, 1).unwrap();
        let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(4, 2)).unwrap();
        assert!(tau_limit_probe(&model, &[0.9], &ExpectileConfig::default(), 0.05).is_err());
    }
}
