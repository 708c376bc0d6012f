//! Aggregating states by a learned measurement and bounding the value loss.

use bisimlab::bisim::{scaled_fixed_point, ScalingConfig};
use bisimlab::cli::suites::value_bound_case;
use bisimlab::eval::{aggregate, value_bound_check};
use bisimlab::repr::{distance_table, train, TrainConfig};

fn main() -> bisimlab::Result<()> {
    let (mdp, pol, ds) = value_bound_case(0, 0)?;
    let sc = ScalingConfig::reward_scaled(0.9);
    let fixed = scaled_fixed_point(&mdp, &pol, sc, 1e-12)?;
    let cfg = TrainConfig::default();
    let learned = distance_table(&train(&ds, &cfg)?.encoder.embed_states()?, cfg.distance);
    for omega in [0.05, 0.1, 0.2] {
        let agg = aggregate(&learned, omega, &mdp, &pol)?;
        let rep = value_bound_check(&mdp, &pol, &agg, &fixed, &learned, sc)?;
        println!("omega {omega}: {} clusters, gap {:.4} <= bound {:.4}", rep.n_clusters, rep.max_gap, rep.bound);
    }
    Ok(())
}
