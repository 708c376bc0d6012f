//! TOML experiment configuration. Every table rejects unknown keys and the
//! file must declare `version = 1`.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [gen]
//! normalize = true
//! mdp = { kind = "garnet", n_states = 10, n_actions = 2, branching = 3 }
//!
//! [collect]
//! mdp = "out/mdp.txt"
//! n = 2000
//! drop = { kind = "random_next_states", fraction = 0.3 }
//! ```
//!
//! Relative input paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bisim::ScalingConfig;
use crate::dataset::RemovalRule;
use crate::error::{invalid, Result};
use crate::expectile::ExpectileConfig;
use crate::mdp::{make_chain, make_garnet, make_gridworld, GridSpec, Policy, TabularMdp};
use crate::repr::TrainConfig;
use crate::rng;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub gen: Option<GenSection>,
    pub collect: Option<CollectSection>,
    pub solve: Option<SolveSection>,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub verify: VerifySection,
    pub report: Option<ReportSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            gen: None,
            collect: None,
            solve: None,
            train: None,
            verify: VerifySection::default(),
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSpec {
    Garnet {
        n_states: usize,
        n_actions: usize,
        branching: usize,
        #[serde(default)]
        sparsity: f64,
    },
    Chain {
        rewards: Vec<f64>,
        #[serde(default)]
        slip: f64,
    },
    Gridworld {
        rows: usize,
        cols: usize,
        cell_rewards: Vec<f64>,
        #[serde(default)]
        absorbing: Vec<usize>,
        #[serde(default)]
        slip: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub mdp: MdpSpec,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub normalize: bool,
}

fn default_discount() -> f64 {
    0.9
}

impl GenSection {
    pub fn build(&self, seed: u64) -> Result<TabularMdp> {
        let mdp = match &self.mdp {
            MdpSpec::Garnet {
                n_states,
                n_actions,
                branching,
                sparsity,
            } => make_garnet(*n_states, *n_actions, *branching, *sparsity, seed)?.with_discount(self.discount)?,
            MdpSpec::Chain { rewards, slip } => make_chain(rewards, *slip, self.discount)?,
            MdpSpec::Gridworld {
                rows,
                cols,
                cell_rewards,
                absorbing,
                slip,
            } => make_gridworld(&GridSpec {
                rows: *rows,
                cols: *cols,
                cell_rewards: cell_rewards.clone(),
                absorbing: absorbing.clone(),
                slip: *slip,
                discount: self.discount,
            })?,
        };
        Ok(if self.normalize { mdp.minmax_normalized() } else { mdp })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uniform,
    /// Drawn from the `(seed, "policy")` stream.
    Random,
    Deterministic { actions: Vec<usize> },
}

impl PolicySpec {
    pub fn build(&self, mdp: &TabularMdp, seed: u64) -> Result<Policy> {
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        match self {
            Self::Uniform => Ok(Policy::uniform(n, m)),
            Self::Random => Ok(Policy::random(n, m, &mut rng::stream(seed, "policy", 0))),
            Self::Deterministic { actions } => {
                if actions.len() != n {
                    return Err(invalid(format!("deterministic policy lists {} actions for {n} states", actions.len())));
                }
                Policy::deterministic(m, actions)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DropSpec {
    Fraction { fraction: f64 },
    NextStates { states: Vec<usize> },
    SourceStates { states: Vec<usize> },
    RandomNextStates { fraction: f64 },
}

impl DropSpec {
    pub fn rule(&self) -> RemovalRule {
        match self {
            Self::Fraction { fraction } => RemovalRule::DropFraction(*fraction),
            Self::NextStates { states } => RemovalRule::DropNextStates(states.clone()),
            Self::SourceStates { states } => RemovalRule::DropSourceStates(states.clone()),
            Self::RandomNextStates { fraction } => RemovalRule::DropRandomNextStates(*fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub mdp: PathBuf,
    #[serde(default)]
    pub policy: PolicySpec,
    pub n: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub drop: Option<DropSpec>,
    #[serde(default)]
    pub normalize: bool,
}

fn default_horizon() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    PiBisim,
    Scaled,
    Expectile,
    GStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub solver: Solver,
    pub mdp: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub policy: PolicySpec,
    /// Defaults to `c_r = 1, c_k = gamma`.
    pub scaling: Option<ScalingConfig>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Only read by the expectile solver; its `scaling` and `tol` are replaced by the section's.
    #[serde(default)]
    pub expectile: ExpectileConfig,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    /// Min-max normalize rewards before training.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub config: TrainConfig,
}

pub const ALL_SUITES: [&str; 8] = [
    "contraction",
    "monotonicity",
    "tau-limit",
    "lemma2",
    "prop4",
    "appendix-i",
    "value-bound",
    "rs-ablation",
];

/// Sizes of the verification suites. The defaults are the release gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suites: Vec<String>,
    /// Random MDPs per suite for the lifted-equivalence and monotonicity suites.
    pub n_mdps: usize,
    pub contraction_trials: usize,
    pub tau_limit_mdps: usize,
    pub value_bound_seeds: usize,
    pub ablation_seeds: usize,
    pub train_steps: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suites: ALL_SUITES.iter().map(|s| s.to_string()).collect(),
            n_mdps: 50,
            contraction_trials: 1000,
            tau_limit_mdps: 20,
            value_bound_seeds: 20,
            ablation_seeds: 5,
            train_steps: 4000,
        }
    }
}

impl VerifySection {
    pub fn validate(&self) -> Result<()> {
        for s in &self.suites {
            if !ALL_SUITES.contains(&s.as_str()) {
                return Err(invalid(format!("unknown suite `{s}`; known: {}", ALL_SUITES.join(", "))));
            }
        }
        if self.n_mdps == 0
            || self.contraction_trials == 0
            || self.tau_limit_mdps == 0
            || self.value_bound_seeds == 0
            || self.ablation_seeds == 0
            || self.train_steps == 0
        {
            return Err(invalid("verify sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Verify CSVs to summarize; defaults to `verify.csv` in the output directory.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.verify.validate()?;
        Ok(cfg)
    }

    /// Canonical text of the parsed config, the input of the manifest hash.
    pub fn canonical(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Rewrites relative input paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = &mut self.collect {
            fix(&mut c.mdp);
        }
        if let Some(s) = &mut self.solve {
            s.mdp.as_mut().map(fix);
            s.dataset.as_mut().map(fix);
        }
        if let Some(t) = &mut self.train {
            fix(&mut t.dataset);
        }
        if let Some(r) = &mut self.report {
            r.inputs.iter_mut().for_each(fix);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse("version = 1\n").unwrap();
        assert_eq!(c.verify.suites.len(), ALL_SUITES.len());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(ExperimentConfig::parse("version = 1\nsed = 3\n").is_err());
        assert!(ExperimentConfig::parse("version = 2\n").is_err());
        assert!(ExperimentConfig::parse("seed = 2\n").is_err());
        assert!(ExperimentConfig::parse("version = 1\n[verify]\nsuites = [\"nope\"]\n").is_err());
        assert!(ExperimentConfig::parse("version = 1\n[train]\ndataset = \"d\"\n[train.config]\nseed = 3\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let text = r#"
version = 1
seed = 4
[gen]
normalize = true
mdp = { kind = "garnet", n_states = 5, n_actions = 2, branching = 2 }
[collect]
mdp = "m.txt"
n = 100
drop = { kind = "random_next_states", fraction = 0.3 }
[solve]
solver = "expectile"
mdp = "m.txt"
scaling = { c_r = 0.1, c_k = 0.9 }
expectile = { tau = 0.7 }
[train]
dataset = "d.txt"
config = { steps = 10, distance = { kind = "mico_angular", beta = 0.2 } }
"#;
        let mut c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.gen.as_ref().unwrap().build(c.seed).unwrap().n_states(), 5);
        assert_eq!(c.solve.as_ref().unwrap().expectile.tau, 0.7);
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.collect.as_ref().unwrap().mdp, PathBuf::from("/base/m.txt"));
        // canonical text parses back to the same config
        assert_eq!(ExperimentConfig::parse(&c.canonical()).unwrap(), c);
    }
}
