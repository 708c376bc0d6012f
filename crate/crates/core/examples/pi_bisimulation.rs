//! On-policy bisimulation metric of a small garnet and the value gaps it dominates.

use bisimlab::bisim::{pi_bisim_fixed_point, value_difference_bound_check, ScalingConfig};
use bisimlab::mdp::{make_garnet, Policy};

fn main() -> bisimlab::Result<()> {
    let mdp = make_garnet(5, 2, 2, 0.0, 1)?;
    let pol = Policy::uniform(5, 2);
    let d = pi_bisim_fixed_point(&mdp, &pol, 1e-10)?;
    println!("metric:{:.4}", d.g);
    let rep = value_difference_bound_check(&mdp, &pol, &d, ScalingConfig::standard(mdp.discount()))?;
    println!("|V_i - V_j| <= d(i, j) on {} pairs, {} violations", rep.pairs, rep.violations);
    Ok(())
}
