//! A cosine encoder fits the reward-scaled target but not the unscaled one.

use bisimlab::bisim::ScalingConfig;
use bisimlab::cli::suites::{ablation_dataset, ablation_run};

fn main() -> bisimlab::Result<()> {
    let ds = ablation_dataset(0)?;
    for (name, sc) in [("scaled", ScalingConfig::reward_scaled(0.9)), ("raw", ScalingConfig::standard(0.9))] {
        let (res, dim) = ablation_run(&ds, sc, 0.5, 4000, 0)?;
        println!("{name:<7} mean residual {res:+.4}  effective dimension {dim}");
    }
    Ok(())
}
