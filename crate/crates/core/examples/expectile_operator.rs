//! Expectile fixed points over a tau grid and the empirical contraction modulus.

use bisimlab::bisim::{OperatorModel, ScalingConfig};
use bisimlab::expectile::{contraction_probe, expectile_fixed_point_model, ExpectileConfig};
use bisimlab::mdp::{make_garnet, Policy};

fn main() -> bisimlab::Result<()> {
    let mdp = make_garnet(6, 2, 3, 0.0, 4)?;
    let model = OperatorModel::from_mdp(&mdp, &Policy::uniform(6, 2))?;
    let base = ExpectileConfig { alpha: 0.5, scaling: ScalingConfig::reward_scaled(0.9), ..Default::default() };
    for tau in [0.1, 0.5, 0.9] {
        let run = expectile_fixed_point_model(&model, &base.with_tau(tau))?;
        println!("tau {tau}: max entry {:.4} after {} sweeps", run.measurement.max_entry(), run.sweeps);
    }
    let rep = contraction_probe(&base.with_tau(0.7), &model, 200, 0)?;
    let worst = rep.ratios.iter().copied().fold(0.0, f64::max);
    println!("worst ratio {worst:.4} vs modulus {:.4}", rep.gamma_tau);
    Ok(())
}
