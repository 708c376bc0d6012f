//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::Command;
use std::time::Instant;

use bisimlab::bisim::{build_lifted_mdp, scaled_fixed_point, Measurement, MeasurementKind, OperatorModel, ScalingConfig, DEFAULT_LIFT_CAP};
use bisimlab::cli::suites::{
    ablation_dataset, ablation_run, gap_case, missing_tail_chain, random_mdp, tau_limit_case, value_bound_case,
};
use bisimlab::dataset::Transition;
use bisimlab::eval::{
    aggregate, appendix_i_experiment, dataset_residual, prop4_construct, residual_error_identity_check,
    value_bound_check, GapExperimentConfig,
};
use bisimlab::expectile::{expectile_fixed_point_model, lipschitz_ratio, random_measurement, tau_limit_probe, ExpectileConfig};
use bisimlab::mdp::{policy_evaluation, Policy};
use bisimlab::repr::{distance_table, gradient_check, kink_margin, train, DistanceKind, Encoder, TrainConfig};
use bisimlab::rng;
use rand::Rng as _;

const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_case(label: &str, k: usize) -> (bisimlab::mdp::TabularMdp, Policy, ScalingConfig) {
    let mut g = rng::stream(SEED, label, k as u64);
    let mdp = random_mdp(&mut g, 8).unwrap();
    let pol = Policy::random(mdp.n_states(), mdp.n_actions(), &mut g);
    let sc = ScalingConfig::new(g.random_range(0.1..2.0), g.random_range(0.0..0.95)).unwrap();
    (mdp, pol, sc)
}

fn lifted_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (mdp, pol, sc) = random_case("acc-mdp", k);
        let lifted = build_lifted_mdp(&mdp, &pol, sc, DEFAULT_LIFT_CAP).unwrap();
        let v = policy_evaluation(&lifted.mdp, &lifted.policy, 1e-11).unwrap();
        let g = scaled_fixed_point(&mdp, &pol, sc, 1e-12).unwrap();
        worst = worst.max((lifted.unmap(&v.v) - &g.g).amax());
    }
    verdict(worst <= 1e-6, format!("max gap {worst:.2e} <= 1e-6 over 50 MDPs"))
}

fn contraction() -> Verdict {
    let mut g = rng::stream(SEED, "acc-contraction", 0);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..1000 {
        let (mdp, pol, _) = random_case("acc-contraction-mdp", k % 50);
        let model = OperatorModel::from_mdp(&mdp, &pol).unwrap();
        let cfg = ExpectileConfig {
            tau: g.random_range(0.01..0.99),
            alpha: g.random_range(0.01..=0.5),
            scaling: ScalingConfig::new(g.random_range(0.1..2.0), g.random_range(0.0..0.99)).unwrap(),
            ..Default::default()
        };
        let n = mdp.n_states();
        let scale = g.random_range(0.1..20.0);
        let g1 = random_measurement(n, scale, &mut g);
        let g2 = random_measurement(n, scale, &mut g);
        worst = worst.max(lipschitz_ratio(&model, &cfg, &g1, &g2) - cfg.gamma_tau());
    }
    verdict(worst <= 1e-10, format!("max ratio - gamma_tau = {worst:.2e} over 1000 draws"))
}

fn monotonicity() -> Verdict {
    let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..50 {
        let (mdp, pol, _) = random_case("acc-mono", k);
        let model = OperatorModel::from_mdp(&mdp, &pol).unwrap();
        let solved: Vec<Measurement> = grid
            .iter()
            .map(|&tau| {
                let cfg = ExpectileConfig {
                    tau,
                    alpha: 0.5,
                    scaling: ScalingConfig::standard(mdp.discount()),
                    tol: 1e-11,
                    ..Default::default()
                };
                expectile_fixed_point_model(&model, &cfg).unwrap().measurement
            })
            .collect();
        for w in solved.windows(2) {
            for (lo, hi) in w[0].g.iter().zip(w[1].g.iter()) {
                worst = worst.max(lo - hi);
                if *hi < lo - 1e-8 {
                    violations += 1;
                }
            }
        }
    }
    verdict(violations == 0, format!("{violations} violations, worst drop {worst:.2e}"))
}

fn tau_limit() -> Verdict {
    let mut ok = true;
    let mut last_worst: f64 = 0.0;
    for k in 0..20 {
        let (mdp, ds) = tau_limit_case(SEED, k).unwrap();
        let full = ds.support().state_actions.len() == mdp.n_states() * 2;
        let base = ExpectileConfig {
            alpha: 0.5,
            scaling: ScalingConfig::reward_scaled(mdp.discount()),
            ..Default::default()
        };
        let rep = tau_limit_probe(&OperatorModel::from_dataset(&ds), &[0.9, 0.99, 0.999], &base, 0.05).unwrap();
        let e = &rep.errors;
        ok &= full && e[1] <= e[0] && e[2] <= e[1] && e[2] <= 0.05;
        last_worst = last_worst.max(e[2]);
    }
    verdict(ok, format!("non-increasing, worst error at 0.999 = {last_worst:.2e} <= 0.05"))
}

fn scaled_bound() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_rs = f64::NEG_INFINITY;
    for k in 0..50 {
        let (mdp, pol, sc) = random_case("acc-mdp", k);
        let g = scaled_fixed_point(&mdp, &pol, sc, 1e-12).unwrap();
        worst = worst.max(g.max_entry() - sc.bound(mdp.r_max() - mdp.r_min()));
        let rs = ScalingConfig::reward_scaled(mdp.discount());
        let g = scaled_fixed_point(&mdp.minmax_normalized(), &pol, rs, 1e-12).unwrap();
        worst_rs = worst_rs.max(g.max_entry());
    }
    verdict(
        worst <= 1e-9 && worst_rs <= 1.0,
        format!("max excess over bound {worst:.2e}, reward-scaled max entry {worst_rs:.4}"),
    )
}

fn planted_error() -> Verdict {
    let (mdp, pol, ds) = missing_tail_chain(SEED).unwrap();
    let sc = ScalingConfig::standard(mdp.discount());
    let anchor = scaled_fixed_point(&mdp, &pol, sc, 1e-13).unwrap();
    let out = prop4_construct(&ds, sc, 1.0, Some(&anchor)).unwrap();
    let res = dataset_residual(&out.measurement, &ds, sc).unwrap();
    let (i, j) = out.target;
    let err = out.measurement.g[(i, j)] - anchor.g[(i, j)];
    verdict(
        res.max_abs == 0.0 && (err - 1.0).abs() <= 1e-9 && !ds.missing_next_states().is_empty(),
        format!("max residual {:e}, error at {:?} = {err:.12}", res.max_abs, out.target),
    )
}

fn residual_gap() -> Verdict {
    let (mdp, pol) = gap_case(SEED, 0).unwrap();
    let cfg = GapExperimentConfig { seed: SEED, ..Default::default() };
    let rep = &appendix_i_experiment(&mdp, &pol, &cfg).unwrap()[0];
    verdict(
        rep.converged && rep.mean_sq_residual < 1e-4 && rep.ratio() >= 10.0,
        format!(
            "residual {:.2e}, error {:.2e}, ratio {:.1}",
            rep.mean_sq_residual,
            rep.mean_sq_error,
            rep.ratio()
        ),
    )
}

fn value_bound() -> Verdict {
    let sc = ScalingConfig::reward_scaled(0.9);
    let mut violations = 0;
    let mut checks = 0;
    for k in 0..20 {
        let (mdp, pol, ds) = value_bound_case(SEED, k).unwrap();
        let fixed = scaled_fixed_point(&mdp, &pol, sc, 1e-12).unwrap();
        let cfg = TrainConfig { steps: 4000, seed: k as u64, ..Default::default() };
        let enc = train(&ds, &cfg).unwrap().encoder;
        let learned = distance_table(&enc.embed_states().unwrap(), cfg.distance);
        for g_phi in [&fixed, &learned] {
            for omega in [0.05, 0.1, 0.2] {
                let agg = aggregate(g_phi, omega, &mdp, &pol).unwrap();
                violations += value_bound_check(&mdp, &pol, &agg, &fixed, g_phi, sc).unwrap().violations;
                checks += 1;
            }
        }
    }
    verdict(violations == 0, format!("{violations} violations in {checks} configurations"))
}

fn identity() -> Verdict {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (mdp, pol, sc) = random_case("acc-identity", k);
        let mut g = rng::stream(SEED, "acc-identity-g", k as u64);
        let gm = Measurement::new(random_measurement(mdp.n_states(), 5.0, &mut g), MeasurementKind::Learned);
        let rep = residual_error_identity_check(&gm, &mdp, &pol, sc).unwrap();
        ok &= rep.max_identity_violation <= 1e-8 && rep.max_abs_error <= rep.max_abs_residual / (1.0 - sc.c_k) + 1e-8;
        worst = worst.max(rep.max_identity_violation);
    }
    verdict(ok, format!("identity violation {worst:.2e} <= 1e-8, sup bound holds on 100 draws"))
}

fn reward_scaling() -> Verdict {
    let ds = ablation_dataset(SEED).unwrap();
    let (mut ok, mut wins) = (true, 0);
    let mut detail = Vec::new();
    for s in 0..5 {
        let (rs, d_rs) = ablation_run(&ds, ScalingConfig::reward_scaled(0.9), 0.5, 4000, s).unwrap();
        let (raw, d_raw) = ablation_run(&ds, ScalingConfig::standard(0.9), 0.5, 4000, s).unwrap();
        ok &= rs.abs() < 0.01 && raw > 0.05;
        wins += usize::from(d_rs >= d_raw);
        detail.push(format!("{rs:.4}/{raw:.3}/{d_rs}v{d_raw}"));
    }
    verdict(ok && wins >= 4, format!("rs/raw residual, dims per seed: {}; dim wins {wins}/5", detail.join(" ")))
}

fn gradients() -> Verdict {
    let ds = ablation_dataset(SEED).unwrap();
    let mut g = rng::stream(SEED, "acc-grad", 0);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 100 {
        let kind = if checked % 2 == 0 { DistanceKind::Cosine } else { DistanceKind::mico() };
        let cfg = TrainConfig { tau: g.random_range(0.05..0.95), distance: kind, ..Default::default() };
        let e = Encoder::init(vec![8, 12, 4], kind, &mut g).unwrap();
        let t = Encoder::init(vec![8, 12, 4], kind, &mut g).unwrap();
        let batch: Vec<Transition> = (0..6).map(|_| ds.transitions()[g.random_range(0..ds.len())]).collect();
        if kink_margin(&e, &(0..8).collect::<Vec<_>>()).unwrap() < 1e-3 {
            continue;
        }
        worst = worst.max(gradient_check(&e, &t, &batch, &cfg, 1e-5).unwrap());
        checked += 1;
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} over 100 points"))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_bisimlab"))
            .args(["verify", "--seed", "11", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        (status.status.code(), std::fs::read(out.join("verify.csv")).unwrap())
    };
    let (c1, a) = run("a");
    let (c2, b) = run("b");
    verdict(c1 == c2 && a == b, format!("{} bytes, exit codes {c1:?}/{c2:?}", a.len()))
}

/// Name, runtime limit in seconds, check.
type Criterion = (&'static str, Option<f64>, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 12] = [
        ("1 lifted MDP equivalence", Some(10.0), lifted_equivalence),
        ("2 expectile contraction", Some(30.0), contraction),
        ("3 tau monotonicity", Some(60.0), monotonicity),
        ("4 tau limit", Some(60.0), tau_limit),
        ("5 scaled fixed point bound", None, scaled_bound),
        ("6 zero residual with planted error", None, planted_error),
        ("7 residual-error gap", Some(120.0), residual_gap),
        ("8 aggregation value bound", None, value_bound),
        ("9 residual-error identity", None, identity),
        ("10 reward scaling ablation", None, reward_scaling),
        ("11 gradient correctness", None, gradients),
        ("12 verify determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let budget = limit.map(|l| format!(" (limit {l}s)")).unwrap_or_default();
        println!("criterion {name}: {} | {} | {secs:.2}s{budget}", if pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
