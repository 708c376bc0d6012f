//! Exact Wasserstein-1 between discrete distributions.
//!
//! The transport problem is solved as a min-cost flow by successive shortest
//! paths. Paths come from Bellman-Ford on the residual graph, because reverse
//! arcs carry negative cost. Only states with positive mass enter the graph,
//! so sparse transition rows give tiny problems.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Mass below this is treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Optimal transport cost between `p` and `q` under `cost`.
pub fn wasserstein1(p: &[f64], q: &[f64], cost: &DMatrix<f64>) -> Result<f64> {
    let n = p.len();
    if q.len() != n || cost.nrows() != n || cost.ncols() != n {
        return Err(invalid(format!(
            "W1 dimension mismatch: p {}, q {}, cost {}x{}",
            n,
            q.len(),
            cost.nrows(),
            cost.ncols()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let total: f64 = d.iter().sum();
        if d.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("{name} is not a probability vector")));
        }
    }
    Ok(transport(p, q, |i, j| cost[(i, j)]))
}

/// Min-cost transport of `p` onto `q` without validation; both must carry equal mass.
pub(crate) fn transport(p: &[f64], q: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let src: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let dst: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    let (ns, nd) = (src.len(), dst.len());
    if ns == 0 || nd == 0 {
        return 0.0;
    }
    // a single source or sink forces the coupling
    if ns == 1 {
        return dst.iter().map(|&j| q[j] * cost(src[0], j)).sum();
    }
    if nd == 1 {
        return src.iter().map(|&i| p[i] * cost(i, dst[0])).sum();
    }
    let c: Vec<f64> = src
        .iter()
        .flat_map(|&i| dst.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();
    let mut supply: Vec<f64> = src.iter().map(|&i| p[i]).collect();
    let mut demand: Vec<f64> = dst.iter().map(|&j| q[j]).collect();
    let mut flow = vec![0.0; ns * nd];
    // node ids: sources 0..ns, sinks ns..ns+nd
    let nn = ns + nd;
    let mut dist = vec![0.0; nn];
    let mut pred = vec![usize::MAX; nn];
    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= MASS_EPS || demand.iter().all(|&d| d <= MASS_EPS) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        pred.iter_mut().for_each(|x| *x = usize::MAX);
        for (i, &s) in supply.iter().enumerate() {
            if s > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nn {
            let mut changed = false;
            for i in 0..ns {
                for j in 0..nd {
                    let k = i * nd + j;
                    // forward arc source -> sink
                    if dist[i].is_finite() && dist[i] + c[k] < dist[ns + j] - 1e-15 {
                        dist[ns + j] = dist[i] + c[k];
                        pred[ns + j] = i;
                        changed = true;
                    }
                    // reverse arc sink -> source where flow can be pushed back
                    if flow[k] > MASS_EPS
                        && dist[ns + j].is_finite()
                        && dist[ns + j] - c[k] < dist[i] - 1e-15
                    {
                        dist[i] = dist[ns + j] - c[k];
                        pred[i] = ns + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(end) = (0..nd)
            .filter(|&j| demand[j] > MASS_EPS && dist[ns + j].is_finite())
            .min_by(|&a, &b| dist[ns + a].total_cmp(&dist[ns + b]))
        else {
            break;
        };
        // walk back to the origin, collecting the bottleneck
        let mut amount = demand[end];
        let mut node = ns + end;
        let mut path = Vec::new();
        loop {
            let prev = pred[node];
            if node < ns {
                if prev == usize::MAX {
                    amount = amount.min(supply[node]);
                    break;
                }
                // reached a source via a reverse arc from sink `prev`
                let k = node * nd + (prev - ns);
                amount = amount.min(flow[k]);
                path.push((k, -1.0));
            } else {
                path.push((prev * nd + (node - ns), 1.0));
            }
            node = prev;
        }
        let origin = node;
        for (k, sign) in path {
            flow[k] += sign * amount;
            if flow[k] < 0.0 {
                flow[k] = 0.0;
            }
        }
        supply[origin] -= amount;
        demand[end] -= amount;
    }
    flow.iter().zip(&c).map(|(f, c)| f * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn discrete(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(wasserstein1(&p, &p, &discrete(3)).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_pay_the_cost_entry() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 3.5, 3.5, 0.0]);
        assert_eq!(wasserstein1(&[1.0, 0.0], &[0.0, 1.0], &cost).unwrap(), 3.5);
    }

    #[test]
    fn shifted_halves() {
        let w = wasserstein1(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &discrete(3)).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn line_metric_needs_reverse_arcs() {
        // greedy matching would pay 2 + 2; optimum is 1 + 1 + ... = 2
        let cost = DMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let w = wasserstein1(&[0.5, 0.0, 0.5, 0.0], &[0.0, 0.5, 0.0, 0.5], &cost).unwrap();
        assert!((w - 1.0).abs() < 1e-14, "{w}");
    }

    #[test]
    fn rejects_mismatched_sizes() {
        assert!(wasserstein1(&[1.0], &[0.5, 0.5], &discrete(2)).is_err());
    }
}
