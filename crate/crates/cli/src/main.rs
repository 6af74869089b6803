//! `stratw`: stratified propensity-score weighting from the command line.
//!
//! Exit status: 0 success, 2 configuration or validation error, 3 structural
//! positivity violation, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stratw::ErrorClass;

use config::{Format, RunConfig, SeChoice};

#[derive(Parser)]
#[command(
    name = "stratw",
    version,
    about = "Stratified propensity-score weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the two-stratum demonstration cohort (cohort.csv, fig1.csv).
    Simulate(Opts),
    /// Fit propensity models and write weights.csv and fits.json.
    Weigh(Opts),
    /// Write balance tables (overall and per stratum).
    Balance(Opts),
    /// Estimate the marginal effect and write effect.json.
    Estimate(Opts),
    /// Simulate (when no input is given), weigh, balance and estimate.
    Run(Opts),
}

#[derive(Args)]
struct Opts {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// One propensity model per stratum plus two-stage rescaling (default).
    #[arg(long, conflicts_with = "unstratified")]
    stratify: bool,
    /// A single pooled propensity model with stratum terms.
    #[arg(long)]
    unstratified: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Option<Vec<Format>>,
    /// Seed for the simulation and the bootstrap.
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates; also requests bootstrap SEs alongside the sandwich.
    #[arg(long, value_name = "B")]
    boot: Option<usize>,
    #[arg(long, value_enum)]
    se: Option<SeChoice>,
    /// Also report an effect for every stratum.
    #[arg(long)]
    per_stratum: bool,
    /// Outcome column of the input CSV.
    #[arg(long)]
    outcome: Option<String>,
    /// Covariate columns, comma separated (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Categorical covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    categorical: Option<Vec<String>>,
    /// Symmetric percentile at which raw weights are capped.
    #[arg(long)]
    truncate: Option<f64>,
}

impl Opts {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if self.stratify {
            cfg.stratify = true;
        }
        if self.unstratified {
            cfg.stratify = false;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(f) = &self.format {
            cfg.formats = f.clone();
        }
        if let Some(seed) = self.seed {
            cfg.simulate.seed = seed;
            cfg.bootstrap.seed = seed;
        }
        if let Some(b) = self.boot {
            cfg.bootstrap.replicates = b;
            if cfg.se == SeChoice::Sandwich {
                cfg.se = SeChoice::Both;
            }
        }
        if let Some(se) = self.se {
            cfg.se = se;
        }
        if self.per_stratum {
            cfg.per_stratum = true;
        }
        if let Some(y) = &self.outcome {
            cfg.schema.outcome = Some(y.clone());
        }
        if let Some(c) = &self.covariates {
            cfg.schema.covariates = c.clone();
        }
        if let Some(c) = &self.categorical {
            cfg.schema.categorical = c.clone();
        }
        if self.truncate.is_some() {
            cfg.truncation = self.truncate;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(o) => {
            commands::simulate(&o.resolve()?)?;
        }
        Command::Weigh(o) => {
            let cfg = o.resolve()?;
            let cohort = commands::load_cohort(&cfg)?;
            commands::weigh(&cfg, &cohort)?;
        }
        Command::Balance(o) => {
            let cfg = o.resolve()?;
            let cohort = commands::load_cohort(&cfg)?;
            let ws = stratw::compute_weights(&cohort, &cfg.weighting(&cohort)?)?;
            commands::balance(&cfg, &cohort, &ws)?;
        }
        Command::Estimate(o) => {
            let cfg = o.resolve()?;
            let cohort = commands::load_cohort(&cfg)?;
            let ws = stratw::compute_weights(&cohort, &cfg.weighting(&cohort)?)?;
            commands::estimate(&cfg, &cohort, &ws)?;
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            let cohort = match cfg.input {
                Some(_) => commands::load_cohort(&cfg)?,
                None => commands::simulate(&cfg)?,
            };
            let ws = commands::weigh(&cfg, &cohort)?;
            commands::balance(&cfg, &cohort, &ws)?;
            if cohort.has_outcomes() {
                commands::estimate(&cfg, &cohort, &ws)?;
            } else {
                eprintln!("note: cohort has no outcome column; skipping estimation");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .downcast_ref::<stratw::Error>()
        .map(stratw::Error::class)
    {
        Some(ErrorClass::Positivity) => 3,
        Some(ErrorClass::Numerical) => 4,
        Some(ErrorClass::Validation) | None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
