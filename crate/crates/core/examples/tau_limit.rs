//! As tau grows, the expectile fixed point approaches the in-sample maximum.

use bisimlab::bisim::{OperatorModel, ScalingConfig};
use bisimlab::dataset::collect;
use bisimlab::expectile::{tau_limit_probe, ExpectileConfig};
use bisimlab::mdp::{make_garnet, Policy};

fn main() -> bisimlab::Result<()> {
    let mdp = make_garnet(6, 2, 1, 0.0, 2)?.minmax_normalized();
    let ds = collect(&mdp, &Policy::uniform(6, 2), 400, 10, 1)?;
    let base = ExpectileConfig { alpha: 0.5, scaling: ScalingConfig::reward_scaled(0.9), ..Default::default() };
    let taus = [0.6, 0.9, 0.99, 0.999];
    let rep = tau_limit_probe(&OperatorModel::from_dataset(&ds), &taus, &base, 0.05)?;
    for (t, e) in taus.iter().zip(&rep.errors) {
        println!("tau {t:<6} error {e:.3e}");
    }
    Ok(())
}
