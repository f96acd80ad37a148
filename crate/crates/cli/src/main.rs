// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

mod commands;
mod config;
mod report;

use config::*;
use report::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{0}")]
    Validation(mtlab::Error),
    #[error("{0}")]
    Numerical(mtlab::Error),
    #[error("non-finite value in {table}, row {row}, column {column}")]
    NonFinite { table: String, row: usize, column: String },
    #[error("io: {0}")]
    IoFailure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigParse(_) | CliError::Validation(_) => 2,
            CliError::Numerical(_) | CliError::NonFinite { .. } => 3,
            CliError::IoFailure(_) => 1,
        }
    }

    fn kind(&self) -> &str {
        match self {
            CliError::ConfigParse(_) => "ConfigParse",
            CliError::Validation(e) | CliError::Numerical(e) => e.kind(),
            CliError::NonFinite { .. } => "NonFinite",
            CliError::IoFailure(_) => "IoFailure",
        }
    }
}

impl From<mtlab::Error> for CliError {
    fn from(e: mtlab::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e)
        } else {
            CliError::Numerical(e)
        }
    }
}

#[derive(Parser)]
#[command(name = "mtlab", version, about = "Numerical experiments on concentrating critical points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags given after it override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config overrides as `--key value` (dots reach nested fields, e.g. `--grid.n 128`).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Radial bubble profiles and their energy product.
    Bubble(Common),
    /// Closed-form moment integrals of the Liouville bubble.
    Moments(Common),
    /// Flux of the first-order profile correction.
    W1(Common),
    /// Fit of the energy product to an expansion in gamma^-p.
    EnergyExpansion(Common),
    /// Energies and KR distances of concentrating test functions.
    Testfn(Common),
    /// Solve the Euler-Lagrange equation at fixed beta.
    Solve(Common),
    /// Follow the solution branch in beta (or sweep p).
    Continue(Common),
    /// Peak table of a field written by `solve`, or of a planted bubble.
    Diagnose(Common),
}

impl Common {
    /// `--config` and `--out` may also appear among the trailing overrides.
    fn resolve(&self) -> Common {
        let mut c = Common { config: self.config.clone(), out: self.out.clone(), rest: Vec::new() };
        let mut it = self.rest.iter();
        while let Some(a) = it.next() {
            let (key, inline) = match a.split_once('=') {
                Some((k, v)) => (k, Some(v.to_string())),
                None => (a.as_str(), None),
            };
            if key == "--config" || key == "--out" {
                if let Some(v) = inline.or_else(|| it.next().cloned()) {
                    if key == "--config" {
                        c.config = Some(v.into());
                    } else {
                        c.out = v.into();
                    }
                    continue;
                }
            }
            c.rest.push(a.clone());
        }
        c
    }
}

fn run_with<T, F>(name: &'static str, common: &Common, f: F) -> Result<(), CliError>
where
    T: serde::de::DeserializeOwned + Serialize + Validate,
    F: FnOnce(&T) -> Result<Report, CliError>,
{
    let common = &common.resolve();
    let cfg: T = load(common.config.as_deref(), parse_overrides(&common.rest)?)?;
    let echo = serde_json::to_value(&cfg).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    let sidecar_path = common.out.join(format!("{name}.json"));
    let fail = |e: CliError, report: Option<&Report>| -> CliError {
        // Best effort: the error entry is still written when the output directory is usable.
        if std::fs::create_dir_all(&common.out).is_ok() {
            let doc = report::sidecar(name, echo.clone(), report, Some((e.kind(), e.to_string())));
            let _ = report::write_json(&sidecar_path, &doc);
        }
        e
    };
    let rep = match f(&cfg) {
        Ok(r) => r,
        Err(e) => return Err(fail(e, None)),
    };
    if let Some((table, row, column)) = rep.scan_non_finite() {
        return Err(fail(CliError::NonFinite { table, row, column }, Some(&rep)));
    }
    let written = report::write_tables(&common.out, &rep)?;
    let failure = rep.failure.clone().map(CliError::from);
    let doc = report::sidecar(name, echo, Some(&rep), failure.as_ref().map(|e| (e.kind(), e.to_string())));
    report::write_json(&sidecar_path, &doc)?;
    print_summary(&rep, &written, &sidecar_path);
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn print_summary(rep: &Report, written: &[PathBuf], sidecar: &Path) {
    println!("{}: {} rows", rep.command, rep.rows.len());
    for (k, v) in &rep.summary {
        println!("  {k}: {}", Value::to_string(v));
    }
    for p in written.iter().map(|p| p.as_path()).chain([sidecar]) {
        println!("  wrote {}", p.display());
    }
}

fn lift<T>(r: mtlab::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Bubble(c) => run_with("bubble", c, |x: &BubbleConfig| lift(commands::bubble(x))),
        Command::Moments(c) => run_with("moments", c, |x: &MomentsConfig| lift(commands::moments(x))),
        Command::W1(c) => run_with("w1", c, |x: &W1Config| lift(commands::w1(x))),
        Command::EnergyExpansion(c) => {
            run_with("energy-expansion", c, |x: &ExpansionConfig| lift(commands::energy_expansion(x)))
        }
        Command::Testfn(c) => run_with("testfn", c, |x: &TestFnConfig| lift(commands::testfn(x))),
        Command::Solve(c) => run_with("solve", c, |x: &SolveConfig| lift(commands::solve(x))),
        Command::Continue(c) => run_with("continue", c, |x: &ContinueConfig| lift(commands::continue_branch(x))),
        Command::Diagnose(c) => run_with("diagnose", c, commands::diagnose),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MTLAB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
