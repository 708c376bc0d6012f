//! The scaled fixed point read off as the value function of the paired-state MDP.

use bisimlab::bisim::{build_lifted_mdp, scaled_fixed_point, ScalingConfig, DEFAULT_LIFT_CAP};
use bisimlab::mdp::{make_garnet, policy_evaluation, Policy};

fn main() -> bisimlab::Result<()> {
    let mdp = make_garnet(4, 2, 3, 0.0, 3)?;
    let pol = Policy::uniform(4, 2);
    let sc = ScalingConfig::new(0.5, 0.8)?;
    let lifted = build_lifted_mdp(&mdp, &pol, sc, DEFAULT_LIFT_CAP)?;
    let v = policy_evaluation(&lifted.mdp, &lifted.policy, 1e-12)?;
    let g = scaled_fixed_point(&mdp, &pol, sc, 1e-12)?;
    println!("{} paired states", lifted.mdp.n_states());
    println!("max gap {:e}", (lifted.unmap(&v.v) - &g.g).amax());
    Ok(())
}
