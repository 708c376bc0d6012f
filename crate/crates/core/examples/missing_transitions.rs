//! Dropped next states let a measurement fit every tuple while staying far from the truth.

use bisimlab::bisim::{scaled_fixed_point, ScalingConfig};
use bisimlab::cli::suites::{gap_case, missing_tail_chain};
use bisimlab::eval::{appendix_i_experiment, prop4_construct, GapExperimentConfig};

fn main() -> bisimlab::Result<()> {
    let (mdp, pol, ds) = missing_tail_chain(0)?;
    let sc = ScalingConfig::standard(mdp.discount());
    let truth = scaled_fixed_point(&mdp, &pol, sc, 1e-13)?;
    let out = prop4_construct(&ds, sc, 1.0, Some(&truth))?;
    println!("planted: residual {:e}, error {:.9} at {:?}", out.max_residual, out.error_at_target, out.target);

    let (mdp, pol) = gap_case(0, 0)?;
    let cfg = GapExperimentConfig { sizes: vec![1000, 2000], ..Default::default() };
    for rep in appendix_i_experiment(&mdp, &pol, &cfg)? {
        println!(
            "{} tuples: residual {:.2e}, error {:.2e}, ratio {:.0}",
            rep.n_transitions,
            rep.mean_sq_residual,
            rep.mean_sq_error,
            rep.ratio()
        );
    }
    Ok(())
}
