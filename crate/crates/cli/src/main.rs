use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use skew_response::harness::{self, ExperimentConfig, Subcommand};
use skew_response::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Stability,
    Response,
    Annealed,
    Regularity,
    Variance,
    Moments,
    Diagnostics,
    All,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Stability => Subcommand::Stability,
            Command::Response => Subcommand::Response,
            Command::Annealed => Subcommand::Annealed,
            Command::Regularity => Subcommand::Regularity,
            Command::Variance => Subcommand::Variance,
            Command::Moments => Subcommand::Moments,
            Command::Diagnostics => Subcommand::Diagnostics,
            Command::All => Subcommand::All,
        }
    }
}

/// Transfer-operator experiments for random expanding circle maps over a rotation.
#[derive(Debug, Parser)]
#[command(name = "skew-response", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set fiber.b=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random draw (same as `--set moments.rng_seed=…`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (same as `--set output_dir=…`).
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("moments.rng_seed={seed}"));
    }
    if let Some(out) = &args.out {
        // JSON-quote so paths that look like numbers stay strings
        overrides.push(format!("output_dir={}", serde_json::Value::from(out.to_string_lossy())));
    }
    let config = match ExperimentConfig::load(args.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match harness::run(args.command.into(), &config) {
        Ok(r) => r,
        Err(e @ Error::ConfigInvalid(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    for (name, flag) in &report.flags {
        let status = if flag.pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {}", flag.detail);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("report: {}", config.output_dir.join("report.json").display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed: {}", report.failed_flags().join(", "));
        ExitCode::from(EXIT_NUMERICAL)
    }
}
