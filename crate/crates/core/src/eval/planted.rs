use nalgebra::DMatrix;

use super::dataset_residual;
use crate::bisim::{Measurement, MeasurementKind, ScalingConfig};
use crate::dataset::OfflineDataset;
use crate::error::{invalid, Error, Result};

/// Float sweeps allowed when settling pairs whose chains loop inside the data.
const CYCLE_SWEEPS: usize = 100_000;

/// A measurement with zero empirical residual but a chosen error at one pair.
#[derive(Debug, Clone)]
pub struct PlantedConstruction {
    pub measurement: Measurement,
    /// Source-state pair carrying the planted error.
    pub target: (usize, usize),
    /// Pair of next states, at least one never observed as a source, that absorbs the freedom.
    pub frontier: (usize, usize),
    /// Number of steps from `target` to `frontier`.
    pub depth: usize,
    /// `g - anchor` at `target`.
    pub error_at_target: f64,
    /// Largest `|eps|` over all ordered tuple pairs.
    pub max_residual: f64,
}

#[derive(Clone, Copy)]
struct Outcome {
    r: f64,
    next: usize,
    done: bool,
}

enum Chain {
    Frontier(usize, (usize, usize)),
    Stops,
    Loops,
}

/// Builds a measurement that satisfies every per-tuple equation of `ds` exactly
/// while sitting `c` above `anchor` (the true fixed point, zero if absent) at
/// one pair. Pair values are back-solved along the observed chains; the only
/// free values sit at pairs involving a next state that never appears as a
/// source, and one of them is set to `(anchor + c - path) / c_k^depth`.
///
/// Every source state must have a single outcome `(r, s', done)` in the data,
/// otherwise no table can zero all residuals.
pub fn prop4_construct(ds: &OfflineDataset, scaling: ScalingConfig, c: f64, anchor: Option<&Measurement>) -> Result<PlantedConstruction> {
    scaling.validate()?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(invalid(format!("C = {c} must be finite and nonnegative")));
    }
    if scaling.c_k == 0.0 {
        return Err(invalid("with c_k = 0 next states cannot carry any freedom"));
    }
    let n = ds.n_states();
    let anchor = match anchor {
        Some(a) if a.n() != n => return Err(invalid("anchor size does not match the dataset")),
        Some(a) => a.g.clone(),
        None => DMatrix::zeros(n, n),
    };
    let mut outcome: Vec<Option<Outcome>> = vec![None; n];
    for t in ds.transitions() {
        let o = Outcome {
            r: t.r,
            next: t.s_next,
            done: t.done,
        };
        match outcome[t.s] {
            None => outcome[t.s] = Some(o),
            Some(prev) if prev.r.to_bits() == o.r.to_bits() && prev.next == o.next && prev.done == o.done => {}
            Some(_) => {
                return Err(Error::Construction(format!(
                    "state {} has more than one observed outcome; zero residual is unattainable",
                    t.s
                )))
            }
        }
    }
    let is_source = |s: usize| outcome[s].is_some();
    let chain = |a: usize, b: usize| -> Chain {
        let (mut i, mut j) = (a, b);
        let mut seen = std::collections::BTreeSet::new();
        for depth in 0.. {
            if !is_source(i) || !is_source(j) {
                return Chain::Frontier(depth, (i, j));
            }
            let (oi, oj) = (outcome[i].unwrap(), outcome[j].unwrap());
            if oi.done || oj.done {
                return Chain::Stops;
            }
            if !seen.insert((i, j)) {
                return Chain::Loops;
            }
            (i, j) = (oi.next, oj.next);
        }
        unreachable!()
    };
    // shortest chain to a frontier; off-diagonal pairs first, then index order
    // (on diagonal, chain length, start pair, frontier pair)
    type Candidate = (bool, usize, (usize, usize), (usize, usize));
    let mut best: Option<Candidate> = None;
    for a in (0..n).filter(|&s| is_source(s)) {
        for b in (a..n).filter(|&s| is_source(s)) {
            if let Chain::Frontier(depth, f) = chain(a, b) {
                let key = (a == b, depth, (a, b), f);
                if best.is_none_or(|cur| (key.0, key.1) < (cur.0, cur.1)) {
                    best = Some(key);
                }
            }
        }
    }
    let (_, depth, target, frontier) = best.ok_or_else(|| {
        Error::Construction("no dataset pair leads to a next state missing from the sources".into())
    })?;

    let step = |i: usize, j: usize, g: &DMatrix<f64>| -> f64 {
        let (oi, oj) = (outcome[i].unwrap(), outcome[j].unwrap());
        let cont = if oi.done || oj.done { 0.0 } else { scaling.c_k };
        let next = if cont == 0.0 { 0.0 } else { g[(oi.next, oj.next)] };
        scaling.c_r * (oi.r - oj.r).abs() + cont * next
    };

    let mut g = anchor.clone();
    // path contribution from target to frontier
    let (mut path, mut weight) = (0.0, 1.0);
    let (mut i, mut j) = target;
    for _ in 0..depth {
        let (oi, oj) = (outcome[i].unwrap(), outcome[j].unwrap());
        path += weight * scaling.c_r * (oi.r - oj.r).abs();
        weight *= scaling.c_k;
        (i, j) = (oi.next, oj.next);
    }
    let free = (anchor[target] + c - path) / weight;
    g[frontier] = free;
    g[(frontier.1, frontier.0)] = free;

    // settle every source pair: finite chains by memoized back-substitution, loops by sweeping
    let mut settled = DMatrix::from_element(n, n, false);
    for a in 0..n {
        for b in 0..n {
            if !is_source(a) || !is_source(b) {
                settled[(a, b)] = true;
            }
        }
    }
    let mut looping = Vec::new();
    for a in (0..n).filter(|&s| is_source(s)) {
        for b in (0..n).filter(|&s| is_source(s)) {
            if settled[(a, b)] {
                continue;
            }
            if let Chain::Loops = chain(a, b) {
                looping.push((a, b));
                continue;
            }
            // walk forward to the first settled pair, then fill in backwards
            let mut stack = vec![(a, b)];
            let (mut i, mut j) = (a, b);
            loop {
                let (oi, oj) = (outcome[i].unwrap(), outcome[j].unwrap());
                if oi.done || oj.done {
                    break;
                }
                (i, j) = (oi.next, oj.next);
                if settled[(i, j)] {
                    break;
                }
                stack.push((i, j));
            }
            while let Some((i, j)) = stack.pop() {
                g[(i, j)] = step(i, j, &g);
                settled[(i, j)] = true;
            }
        }
    }
    if !looping.is_empty() {
        let mut stable = false;
        for _ in 0..CYCLE_SWEEPS {
            let mut changed = false;
            for &(i, j) in &looping {
                let v = step(i, j, &g);
                if v.to_bits() != g[(i, j)].to_bits() {
                    g[(i, j)] = v;
                    changed = true;
                }
            }
            if !changed {
                stable = true;
                break;
            }
        }
        if !stable {
            return Err(Error::Convergence {
                sweeps: CYCLE_SWEEPS,
                last_change: f64::NAN,
                history: Vec::new(),
            });
        }
    }
    let measurement = Measurement::new(g, MeasurementKind::Learned).with_scaling(scaling);
    let max_residual = dataset_residual(&measurement, ds, scaling)?.max_abs;
    Ok(PlantedConstruction {
        error_at_target: measurement.g[target] - anchor[target],
        measurement,
        target,
        frontier,
        depth,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;

    fn tup(s: usize, r: f64, s_next: usize) -> Transition {
        Transition {
            s,
            a: 0,
            r,
            s_next,
            done: false,
        }
    }

    #[test]
    fn two_one_step_trajectories() {
        let ds = OfflineDataset::new(4, 1, "two", vec![tup(0, 0.0, 2), tup(1, 0.0, 3)]).unwrap();
        let sc = ScalingConfig::standard(0.99);
        let out = prop4_construct(&ds, sc, 1.0, None).unwrap();
        assert_eq!(out.target, (0, 1));
        assert_eq!(out.frontier, (2, 3));
        assert!((out.measurement.g[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((out.measurement.g[(2, 3)] - 1.0 / 0.99).abs() < 1e-15);
        assert_eq!(out.max_residual, 0.0);
        assert!((out.error_at_target - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_c_gives_zero_table() {
        let ds = OfflineDataset::new(4, 1, "two", vec![tup(0, 0.0, 2), tup(1, 0.0, 3)]).unwrap();
        let out = prop4_construct(&ds, ScalingConfig::standard(0.9), 0.0, None).unwrap();
        assert!(out.measurement.g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn covered_dataset_is_rejected() {
        let ds = OfflineDataset::new(2, 1, "loop", vec![tup(0, 0.0, 1), tup(1, 1.0, 0)]).unwrap();
        assert!(matches!(
            prop4_construct(&ds, ScalingConfig::standard(0.9), 1.0, None),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn longer_chains_and_loops_keep_zero_residual() {
        // 0 -> 1 -> 2 -> (missing 5); 3 <-> 4 loop
        let ts = vec![tup(0, 0.2, 1), tup(1, 0.7, 2), tup(2, 0.1, 5), tup(3, 1.0, 4), tup(4, 0.0, 3)];
        let ds = OfflineDataset::new(6, 1, "mix", ts).unwrap();
        let out = prop4_construct(&ds, ScalingConfig::new(0.5, 0.8).unwrap(), 2.0, None).unwrap();
        assert!(out.max_residual <= 1e-15, "{}", out.max_residual);
        assert!((out.error_at_target - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stochastic_sources_are_rejected() {
        let ds = OfflineDataset::new(3, 1, "s", vec![tup(0, 0.0, 1), tup(0, 0.0, 2)]).unwrap();
        assert!(prop4_construct(&ds, ScalingConfig::standard(0.9), 1.0, None).is_err());
    }
}
