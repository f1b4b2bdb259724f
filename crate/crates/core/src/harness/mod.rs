//! Experiment orchestration behind the `skew-response` command line: runs
//! the module pipelines for a validated configuration, writes CSV series and
//! a JSON report with one pass/fail flag per checked property.

mod config;
mod pipelines;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, GridsConfig, MomentsConfig, ObservableChoice, ResponseConfig};
pub use pipelines::shrink_consistent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Stability,
    Response,
    Annealed,
    Regularity,
    Variance,
    Moments,
    Diagnostics,
    All,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Stability,
        Subcommand::Response,
        Subcommand::Annealed,
        Subcommand::Regularity,
        Subcommand::Variance,
        Subcommand::Moments,
        Subcommand::Diagnostics,
        Subcommand::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Stability => "stability",
            Subcommand::Response => "response",
            Subcommand::Annealed => "annealed",
            Subcommand::Regularity => "regularity",
            Subcommand::Variance => "variance",
            Subcommand::Moments => "moments",
            Subcommand::Diagnostics => "diagnostics",
            Subcommand::All => "all",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown subcommand `{s}`")))
    }
}

/// Outcome of one checked property.
#[derive(Debug, Clone, Serialize)]
pub struct Flag {
    /// Acceptance criterion the flag decides.
    pub criterion: u8,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub subcommand: String,
    pub flags: BTreeMap<String, Flag>,
    /// Fitted slopes, rates and other headline numbers.
    pub rates: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// Structured side results (admissibility, audits).
    pub details: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
    /// Wall-clock seconds per stage; written to `timings.json`, not to the report.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(subcommand: Subcommand, config: &ExperimentConfig) -> Self {
        RunReport {
            subcommand: subcommand.name().into(),
            flags: BTreeMap::new(),
            rates: BTreeMap::new(),
            warnings: Vec::new(),
            details: BTreeMap::new(),
            config: config.clone(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn flag(&mut self, name: &str, criterion: u8, pass: bool, detail: impl Into<String>) {
        self.flags.insert(
            name.into(),
            Flag {
                criterion,
                pass,
                detail: detail.into(),
            },
        );
    }

    pub fn passed(&self) -> bool {
        self.flags.values().all(|f| f.pass)
    }

    pub fn failed_flags(&self) -> Vec<&str> {
        self.flags
            .iter()
            .filter(|(_, f)| !f.pass)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// CSV and JSON files under the output directory.
pub(crate) struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub(crate) fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name)).map_err(csv_error)?;
        w.write_record(header).map_err(csv_error)?;
        for r in rows {
            w.write_record(r).map_err(csv_error)?;
        }
        w.flush()?;
        self.written.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.dir.join(name), text)?;
        self.written.push(name.into());
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shortest round-trip representation, so identical values give identical bytes.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// Loads the configuration and runs one subcommand.
pub fn run_from_path(subcommand: Subcommand, config_path: Option<&Path>, overrides: &[String]) -> Result<RunReport> {
    let config = ExperimentConfig::load(config_path, overrides)?;
    run(subcommand, &config)
}

/// Runs `subcommand`, writing its artifacts plus `report.json` and
/// `timings.json` into `config.output_dir`.
pub fn run(subcommand: Subcommand, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let mut out = Outputs::new(&config.output_dir)?;
    let mut report = RunReport::new(subcommand, config);
    let started = Instant::now();
    pipelines::execute(subcommand, config, &mut out, &mut report)?;
    report.timings.insert("total".into(), started.elapsed().as_secs_f64());
    report.artifacts = out.written.clone();
    report.artifacts.push("report.json".into());
    report.artifacts.push("timings.json".into());
    out.json("report.json", &report)?;
    out.json("timings.json", &report.timings)?;
    Ok(report)
}
