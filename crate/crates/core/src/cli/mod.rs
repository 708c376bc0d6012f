//! Command-line driver. Every command reads a TOML [`ExperimentConfig`], writes
//! plain-text artifacts into `--out`, and records a `manifest-<command>.toml`
//! with the config hash, seed and artifact checksums.
//!
//! Exit codes: 0 ok, 2 config or input error, 3 non-convergence or divergence,
//! 4 a verification row failed, 5 I/O failure.

pub mod config;
pub mod suites;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, Solver, VerifySection, ALL_SUITES};

use crate::bisim::{
    g_star_fixed_point, pi_bisim_fixed_point, scaled_fixed_point_model, Measurement, OperatorModel, ScalingConfig,
};
use crate::dataset::{collect, dataset_from_text, dataset_to_text, remove_transitions, OfflineDataset};
use crate::error::{invalid, Error, Result};
use crate::expectile::expectile_fixed_point_model;
use crate::mdp::{mdp_from_text, mdp_to_text, TabularMdp};
use crate::repr::{log_to_csv, train};
use crate::report::{rows_to_csv, ProbeRow, CSV_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "bisimlab", version, about = "Tabular bisimulation experiments")]
pub struct Cli {
    /// TOML experiment config; omitted means all defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate an MDP into mdp.txt.
    Gen,
    /// Roll out a behavior policy into dataset.txt.
    Collect,
    /// Solve a fixed point into measurement.csv.
    Solve,
    /// Train an encoder into encoder.txt and train_log.csv.
    Train,
    /// Run the verification suites into verify.csv.
    Verify,
    /// Summarize verify CSVs into report.txt.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Collect => "collect",
            Self::Solve => "solve",
            Self::Train => "train",
            Self::Verify => "verify",
            Self::Report => "report",
        }
    }
}

/// A command failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Convergence { .. } | Error::Divergence { .. } => EXIT_CONVERGENCE,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Loads the config, applies `--seed`, and resolves relative paths against the config's directory.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            cfg.resolve_paths(p.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<i32, Failure> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("thread pool: {e}"),
        })?;
    std::fs::create_dir_all(&cli.out).map_err(|e| io_fail(&cli.out, e))?;
    let started = Instant::now();
    let out = pool.install(|| run_command(cli.command, &cfg, &cli.out))?;
    for (name, bytes) in &out.artifacts {
        write_atomic(&cli.out.join(name), bytes)?;
    }
    let manifest = manifest_text(cli.command, &cfg, &out.artifacts, started.elapsed().as_secs_f64());
    write_atomic(&cli.out.join(format!("manifest-{}.toml", cli.command.name())), manifest.as_bytes())?;
    if !out.summary.is_empty() {
        print!("{}", out.summary);
    }
    Ok(out.code)
}

/// Files produced by a command, its stdout summary and exit code.
pub struct Output {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: String,
    pub code: i32,
}

impl Output {
    fn ok(artifacts: Vec<(String, Vec<u8>)>) -> Self {
        Self {
            artifacts,
            summary: String::new(),
            code: EXIT_OK,
        }
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    s.as_ref().ok_or_else(|| invalid(format!("the config has no [{name}] section")).into())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_fail(path, e))
}

fn read_mdp(path: &Path) -> Result<TabularMdp, Failure> {
    Ok(mdp_from_text(&read(path)?)?)
}

fn read_dataset(path: &Path) -> Result<OfflineDataset, Failure> {
    Ok(dataset_from_text(&read(path)?)?)
}

pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<Output, Failure> {
    let seed = cfg.seed;
    match cmd {
        Command::Gen => {
            let mdp = section(&cfg.gen, "gen")?.build(seed)?;
            Ok(Output::ok(vec![("mdp.txt".into(), mdp_to_text(&mdp).into_bytes())]))
        }
        Command::Collect => {
            let c = section(&cfg.collect, "collect")?;
            let mdp = read_mdp(&c.mdp)?;
            let pol = c.policy.build(&mdp, seed)?;
            let mut ds = collect(&mdp, &pol, c.n, c.horizon, seed)?;
            if let Some(d) = &c.drop {
                ds = remove_transitions(&ds, &d.rule(), seed)?;
            }
            if c.normalize {
                ds = ds.minmax_normalize();
            }
            Ok(Output::ok(vec![("dataset.txt".into(), dataset_to_text(&ds).into_bytes())]))
        }
        Command::Solve => {
            let g = solve(section(&cfg.solve, "solve")?, seed)?;
            Ok(Output::ok(vec![("measurement.csv".into(), g.to_csv().into_bytes())]))
        }
        Command::Train => {
            let t = section(&cfg.train, "train")?;
            let mut ds = read_dataset(&t.dataset)?;
            if t.normalize {
                ds = ds.minmax_normalize();
            }
            let mut tc = t.config;
            tc.seed = seed;
            let outcome = train(&ds, &tc)?;
            Ok(Output::ok(vec![
                ("encoder.txt".into(), outcome.encoder.to_text().into_bytes()),
                ("train_log.csv".into(), log_to_csv(&outcome.log).into_bytes()),
            ]))
        }
        Command::Verify => verify(&cfg.verify, seed),
        Command::Report => {
            let inputs = match &cfg.report {
                Some(r) if !r.inputs.is_empty() => r.inputs.clone(),
                _ => vec![out_dir.join("verify.csv")],
            };
            let mut rows = Vec::new();
            for p in &inputs {
                rows.extend(parse_rows(&read(p)?)?);
            }
            let text = summary_block(&rows);
            Ok(Output {
                summary: text.clone(),
                artifacts: vec![("report.txt".into(), text.into_bytes())],
                code: EXIT_OK,
            })
        }
    }
}

fn solve(s: &config::SolveSection, seed: u64) -> Result<Measurement, Failure> {
    let source = match (&s.mdp, &s.dataset) {
        (Some(m), None) => {
            let mdp = read_mdp(m)?;
            let pol = s.policy.build(&mdp, seed)?;
            Ok((OperatorModel::from_mdp(&mdp, &pol)?, Some((mdp, pol))))
        }
        (None, Some(d)) => Ok((OperatorModel::from_dataset(&read_dataset(d)?), None)),
        _ => Err(Failure::from(invalid("[solve] needs exactly one of `mdp` or `dataset`"))),
    };
    let discount = |full: &Option<(TabularMdp, _)>| full.as_ref().map_or(0.9, |(m, _): &(TabularMdp, _)| m.discount());
    match s.solver {
        Solver::PiBisim => {
            let (_, full) = source?;
            let (mdp, pol) = full.ok_or_else(|| invalid("pi_bisim needs an MDP"))?;
            Ok(pi_bisim_fixed_point(&mdp, &pol, s.tol)?)
        }
        Solver::Scaled => {
            let (model, full) = source?;
            let sc = s.scaling.unwrap_or_else(|| ScalingConfig::standard(discount(&full)));
            Ok(scaled_fixed_point_model(&model, sc, s.tol)?.measurement)
        }
        Solver::Expectile => {
            let (model, full) = source?;
            let mut ec = s.expectile;
            ec.scaling = s.scaling.unwrap_or_else(|| ScalingConfig::standard(discount(&full)));
            ec.tol = s.tol;
            Ok(expectile_fixed_point_model(&model, &ec)?.measurement)
        }
        Solver::GStar => {
            let d = s.dataset.as_ref().ok_or_else(|| invalid("g_star needs a dataset"))?;
            let ds = read_dataset(d)?;
            let sc = s.scaling.unwrap_or_else(|| ScalingConfig::standard(0.9));
            Ok(g_star_fixed_point(&ds, sc, s.tol)?.max_over_support())
        }
    }
}

/// Runs every selected suite; a suite that errors becomes one failing row.
pub fn verify_rows(v: &VerifySection, seed: u64) -> Vec<ProbeRow> {
    let mut rows = Vec::new();
    for name in &v.suites {
        match suites::run_suite(name, seed, v) {
            Ok(r) => rows.extend(r),
            Err(e) => rows.push(ProbeRow::new(
                name,
                &[("error", suites::sanitize(&e.to_string()))],
                f64::NAN,
                false,
            )),
        }
    }
    rows
}

fn verify(v: &VerifySection, seed: u64) -> Result<Output, Failure> {
    v.validate()?;
    let rows = verify_rows(v, seed);
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(Output {
        summary: summary_block(&rows),
        artifacts: vec![("verify.csv".into(), rows_to_csv(&rows).into_bytes())],
        code: if all_pass { EXIT_OK } else { EXIT_ASSERTION },
    })
}

/// Reads rows written by [`rows_to_csv`].
pub fn parse_rows(text: &str) -> Result<Vec<ProbeRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(invalid("verify CSV header missing"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, l)| {
            let bad = |msg: &str| Error::Parse {
                line: k + 2,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            Ok(ProbeRow {
                probe: f[0].to_string(),
                params: f[1].to_string(),
                max_violation: f[2].parse().map_err(|_| bad("bad max_violation"))?,
                pass: f[3].parse().map_err(|_| bad("bad pass flag"))?,
            })
        })
        .collect()
}

/// Per-probe pass counts and worst violation, in first-seen order.
pub fn summary_block(rows: &[ProbeRow]) -> String {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.probe.as_str()) {
            order.push(&r.probe);
        }
    }
    let mut out = String::new();
    for name in order {
        let group: Vec<&ProbeRow> = rows.iter().filter(|r| r.probe == name).collect();
        let passed = group.iter().filter(|r| r.pass).count();
        let worst = group.iter().map(|r| r.max_violation).filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "{:<22} {:>4}/{:<4} {}  worst {:e}",
            name,
            passed,
            group.len(),
            if passed == group.len() { "PASS" } else { "FAIL" },
            worst
        );
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    let _ = writeln!(out, "total {} rows, {} failed", rows.len(), failed);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hash of the canonical config text plus the effective seed.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(format!("{}\nseed={}\n", cfg.canonical(), cfg.seed).as_bytes())
}

fn manifest_text(cmd: Command, cfg: &ExperimentConfig, artifacts: &[(String, Vec<u8>)], secs: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command = \"{}\"", cmd.name());
    let _ = writeln!(s, "config_hash = \"{}\"", config_hash(cfg));
    let _ = writeln!(s, "tool_version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "wall_seconds = {secs:.3}");
    for (name, bytes) in artifacts {
        let _ = writeln!(s, "\n[[artifact]]\nfile = \"{name}\"\nsha256 = \"{}\"", sha256_hex(bytes));
    }
    s
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_fail(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_fail(path, e))
}
