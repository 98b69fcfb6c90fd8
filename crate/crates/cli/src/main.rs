//! `stoch-euler`: runs simulations, energy budgets and regularity scans from a
//! TOML config and writes CSV tables plus JSON manifests.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stoch_euler::config::{RunConfig, SystemKind};
use stoch_euler::Error;

#[derive(Parser)]
#[command(name = "stoch-euler", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; replaces `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces `ensemble.paths`.
    #[arg(long)]
    paths: Option<usize>,
    /// `homogeneous` or `inhomogeneous`; replaces `system`.
    #[arg(long)]
    system: Option<String>,
}

impl Overrides {
    fn load(&self, experiment: &str) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.check_experiment(experiment)?;
        if let Some(s) = &self.system {
            cfg.set_system(s.parse::<SystemKind>()?);
        }
        if let Some(seed) = self.seed {
            cfg.ensemble.seed = seed;
        }
        if let Some(paths) = self.paths {
            cfg.ensemble.paths = paths;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write checkpoints plus a manifest.
    Simulate(Overrides),
    /// Replay a simulated ensemble and tabulate its energy budget.
    Budget {
        /// `simulate.manifest.json` written by `simulate`.
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mollifier commutator or paired proof-term scan over ε.
    CommutatorScan(Overrides),
    /// Besov seminorm table and fitted Hölder exponent of a synthetic field.
    Besov(Overrides),
    /// Growth-condition verifier and Wiener increment statistics.
    NoiseCheck(Overrides),
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut record = serde_json::json!({
        "status": "error",
        "error": e.kind(),
        "message": e.to_string(),
    });
    if let Error::Config { field, .. } = e {
        record["field"] = serde_json::Value::String(field.clone());
    }
    record
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(o) => o.load("simulate").and_then(|c| commands::simulate(&c)),
        Command::Budget { manifest, out } => commands::budget(manifest, out.as_deref()),
        Command::CommutatorScan(o) => o
            .load("commutator-scan")
            .and_then(|c| commands::commutator_scan(&c)),
        Command::Besov(o) => o.load("besov").and_then(|c| commands::besov(&c)),
        Command::NoiseCheck(o) => o
            .load("noise-check")
            .and_then(|c| commands::noise_check(&c)),
    };
    match result {
        Ok(done) => {
            println!(
                "{}",
                serde_json::to_string(&done).expect("summaries serialize")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
