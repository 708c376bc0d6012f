use nalgebra::DMatrix;

use super::{iterate, Measurement, MeasurementKind, OperatorModel, ScalingConfig, MAX_SWEEPS};
use crate::dataset::OfflineDataset;
use crate::error::Result;

/// Table over pairs of state-action pairs; `(s, a)` is row `s * n_actions + a`.
/// Entries outside the support are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionMeasurement {
    pub g: DMatrix<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    /// `support[s * n_actions + a]`: the pair has positive behavior probability.
    pub support: Vec<bool>,
    /// Next states reached with continuation but lacking any in-support action;
    /// they contribute zero continuation.
    pub dangling: Vec<usize>,
    pub scaling: ScalingConfig,
    pub sweeps: usize,
}

impl StateActionMeasurement {
    pub fn get(&self, s: usize, a: usize, t: usize, b: usize) -> f64 {
        self.g[(s * self.n_actions + a, t * self.n_actions + b)]
    }

    /// `max over in-support (a_i, a_j) of G*((s_i, a_i), (s_j, a_j))`, zero where a state has no support.
    pub fn max_over_support(&self) -> Measurement {
        let g = support_max(&self.g, &self.support, self.n_states, self.n_actions);
        Measurement::new(g, MeasurementKind::Scaled).with_scaling(self.scaling)
    }
}

fn support_max(g: &DMatrix<f64>, support: &[bool], n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let mut best = f64::NEG_INFINITY;
        for a in (0..m).filter(|&a| support[i * m + a]) {
            for b in (0..m).filter(|&b| support[j * m + b]) {
                best = best.max(g[(i * m + a, j * m + b)]);
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    })
}

/// In-sample maximum fixed point on an operator model.
pub fn g_star_fixed_point_model(model: &OperatorModel, scaling: ScalingConfig, tol: f64) -> Result<StateActionMeasurement> {
    scaling.validate()?;
    let (n, m) = (model.n_states(), model.n_actions());
    let nm = n * m;
    let support: Vec<bool> = (0..nm).map(|k| model.policy_prob(k / m, k % m) > 0.0).collect();
    let c = DMatrix::from_fn(nm, n, |k, t| {
        if support[k] {
            model.cont(k % m)[(k / m, t)]
        } else {
            0.0
        }
    });
    let ct = c.transpose();
    let reward_part = DMatrix::from_fn(nm, nm, |x, y| {
        if support[x] && support[y] {
            scaling.c_r * (model.reward(x / m, x % m) - model.reward(y / m, y % m)).abs()
        } else {
            0.0
        }
    });
    let has_action: Vec<bool> = (0..n).map(|s| (0..m).any(|a| support[s * m + a])).collect();
    let dangling: Vec<usize> = (0..n)
        .filter(|&t| !has_action[t] && (0..nm).any(|k| c[(k, t)] > 0.0))
        .collect();
    let (g, history) = iterate(nm, tol, MAX_SWEEPS, |g| {
        let best = support_max(g, &support, n, m);
        let mut next = &reward_part + (&c * best * &ct) * scaling.c_k;
        for x in 0..nm {
            for y in x..nm {
                let v = 0.5 * (next[(x, y)] + next[(y, x)]);
                next[(x, y)] = v;
                next[(y, x)] = v;
            }
        }
        Ok(next)
    })?;
    Ok(StateActionMeasurement {
        g,
        n_states: n,
        n_actions: m,
        support,
        dangling,
        scaling,
        sweeps: history.len(),
    })
}

/// In-sample maximum fixed point on the empirical model of `ds`.
pub fn g_star_fixed_point(ds: &OfflineDataset, scaling: ScalingConfig, tol: f64) -> Result<StateActionMeasurement> {
    g_star_fixed_point_model(&OperatorModel::from_dataset(ds), scaling, tol)
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
    fn disjoint_self_loops() {
        let ds = OfflineDataset::new(2, 1, "loops", vec![tup(0, 0, 0.0, 0), tup(1, 0, 1.0, 1)]).unwrap();
        let g = g_star_fixed_point(&ds, ScalingConfig::new(1.0, 0.5).unwrap(), 1e-12).unwrap();
        assert!((g.get(0, 0, 1, 0) - 2.0).abs() < 1e-11);
        assert!(g.dangling.is_empty());
    }

    #[test]
    fn dangling_next_state_is_flagged() {
        let ds = OfflineDataset::new(3, 1, "d", vec![tup(0, 0, 0.0, 2), tup(1, 0, 1.0, 1)]).unwrap();
        let g = g_star_fixed_point(&ds, ScalingConfig::new(1.0, 0.5).unwrap(), 1e-12).unwrap();
        assert_eq!(g.dangling, [2]);
        // state 0 gets no continuation: 1 + 0.5 * 0
        assert!((g.get(0, 0, 1, 0) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn unsupported_actions_are_excluded() {
        // state 0 only ever takes action 1
        let ds = OfflineDataset::new(2, 2, "u", vec![tup(0, 1, 0.0, 0), tup(1, 0, 1.0, 1), tup(1, 1, 0.5, 1)]).unwrap();
        let g = g_star_fixed_point(&ds, ScalingConfig::new(1.0, 0.5).unwrap(), 1e-12).unwrap();
        assert_eq!(g.get(0, 0, 1, 0), 0.0);
        assert!(!g.support[0] && g.support[1]);
    }
}
