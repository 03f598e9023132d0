use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use progeval::pipeline::{self, Goal, PipelineConfig, RunOutcome};
use progeval::Field;

const OUTPUT_DIR_ENV: &str = "PROGEVAL_OUTPUT_DIR";

/// Program evaluation on two-wave survey microdata: propensity scores,
/// matching, DiD of matched ATTs, weighting estimators and Rosenbaum bounds.
#[derive(Parser)]
#[command(name = "progeval", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the input waves and write canonical copies with load logs.
    Ingest(Options),
    /// Fit the propensity model for each wave.
    Fit(Options),
    /// Fit, restrict to common support and match treated to controls.
    Match(Options),
    /// Matching plus covariate balance and score densities.
    Balance(Options),
    /// Matching plus effect estimates and the summary report.
    Estimate(Options),
    /// Matching plus Rosenbaum bounds over the gamma grid.
    Sensitivity(Options),
    /// Write synthetic waves; with --replications, a Monte-Carlo report too.
    Simulate(Options),
    /// Matched DiD effect per level of a categorical field.
    Sweep {
        /// Field to split on.
        #[arg(long, default_value = "zone")]
        group: String,
        #[command(flatten)]
        options: Options,
    },
    /// Every stage, in order.
    Run(Options),
}

/// A config file plus one override flag per config key. Flags win over the
/// file; `PROGEVAL_OUTPUT_DIR` applies only when neither names an output
/// directory.
#[derive(Args, Default)]
struct Options {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long = "pre")]
    pre: Option<String>,
    #[arg(long = "post")]
    post: Option<String>,
    #[arg(long = "synthetic")]
    synthetic: Option<String>,
    #[arg(long = "benchmark", num_args = 0..=1, default_missing_value = "true")]
    benchmark: Option<String>,
    #[arg(long = "n_per_wave", alias = "n-per-wave")]
    n_per_wave: Option<String>,
    #[arg(long = "delimiter")]
    delimiter: Option<String>,
    #[arg(long = "zone_map", alias = "zone-map")]
    zone_map: Option<String>,
    #[arg(long = "output_dir", alias = "output-dir", short)]
    output_dir: Option<String>,
    #[arg(long = "seed")]
    seed: Option<String>,
    #[arg(long = "link")]
    link: Option<String>,
    /// Comma-separated.
    #[arg(long = "covariates")]
    covariates: Option<String>,
    #[arg(long = "categorical")]
    categorical: Option<String>,
    #[arg(long = "outcome")]
    outcome: Option<String>,
    #[arg(long = "estimand")]
    estimand: Option<String>,
    /// Comma-separated: psm, ipw, aipw, regression.
    #[arg(long = "estimators")]
    estimators: Option<String>,
    #[arg(long = "caliper")]
    caliper: Option<String>,
    #[arg(long = "trim_lower", alias = "trim-lower")]
    trim_lower: Option<String>,
    #[arg(long = "trim_upper", alias = "trim-upper")]
    trim_upper: Option<String>,
    #[arg(long = "gamma_start", alias = "gamma-start")]
    gamma_start: Option<String>,
    #[arg(long = "gamma_stop", alias = "gamma-stop")]
    gamma_stop: Option<String>,
    #[arg(long = "gamma_step", alias = "gamma-step")]
    gamma_step: Option<String>,
    #[arg(long = "mh_method", alias = "mh-method")]
    mh_method: Option<String>,
    #[arg(long = "mh_stratification", alias = "mh-stratification")]
    mh_stratification: Option<String>,
    /// Comma-separated predicates, e.g. `zone==NorthEast`.
    #[arg(long = "subgroups")]
    subgroups: Option<String>,
    #[arg(long = "density_bins", alias = "density-bins")]
    density_bins: Option<String>,
    #[arg(long = "min_group_size", alias = "min-group-size")]
    min_group_size: Option<String>,
    #[arg(long = "replications")]
    replications: Option<String>,
    /// Comma-separated, e.g. `psm_did,ipw_did,aipw_did`.
    #[arg(long = "mc_estimators", alias = "mc-estimators")]
    mc_estimators: Option<String>,
    #[arg(long = "misspecify")]
    misspecify: Option<String>,
}

impl Options {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 29] = [
            ("pre", &self.pre),
            ("post", &self.post),
            ("synthetic", &self.synthetic),
            ("benchmark", &self.benchmark),
            ("n_per_wave", &self.n_per_wave),
            ("delimiter", &self.delimiter),
            ("zone_map", &self.zone_map),
            ("output_dir", &self.output_dir),
            ("seed", &self.seed),
            ("link", &self.link),
            ("covariates", &self.covariates),
            ("categorical", &self.categorical),
            ("outcome", &self.outcome),
            ("estimand", &self.estimand),
            ("estimators", &self.estimators),
            ("caliper", &self.caliper),
            ("trim_lower", &self.trim_lower),
            ("trim_upper", &self.trim_upper),
            ("gamma_start", &self.gamma_start),
            ("gamma_stop", &self.gamma_stop),
            ("gamma_step", &self.gamma_step),
            ("mh_method", &self.mh_method),
            ("mh_stratification", &self.mh_stratification),
            ("subgroups", &self.subgroups),
            ("density_bins", &self.density_bins),
            ("min_group_size", &self.min_group_size),
            ("replications", &self.replications),
            ("mc_estimators", &self.mc_estimators),
            ("misspecify", &self.misspecify),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    fn config(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_path(path)?,
            None => PipelineConfig::default(),
        };
        for (key, value) in self.overrides() {
            config.set(key, value)?;
        }
        Ok(config)
    }
}

fn output_dir(config: &PipelineConfig) -> PathBuf {
    config.output_dir_or(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
}

fn finish(outcome: RunOutcome, dir: &Path) -> Result<bool> {
    outcome
        .write_to(dir)
        .with_context(|| format!("writing reports to {}", dir.display()))?;
    // a closed pipe (e.g. `| head`) is not worth a panic
    let mut out = std::io::stdout().lock();
    for f in &outcome.files {
        let _ = writeln!(out, "{}", dir.join(&f.name).display());
    }
    if let Some(summary) = outcome.file("summary.txt") {
        let _ = write!(out, "\n{summary}");
    }
    if let Some(skipped) = outcome.file("sweep_skipped.txt").filter(|s| !s.trim().is_empty()) {
        eprint!("{skipped}");
    }
    match &outcome.error {
        None => Ok(true),
        Some(e) => {
            eprintln!("error: {e}");
            if !outcome.files.is_empty() {
                eprintln!(
                    "partial outputs in {} are marked by {}",
                    dir.display(),
                    pipeline::INCOMPLETE_MARKER
                );
            }
            Ok(false)
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let options = match &cli.command {
        Command::Ingest(o)
        | Command::Fit(o)
        | Command::Match(o)
        | Command::Balance(o)
        | Command::Estimate(o)
        | Command::Sensitivity(o)
        | Command::Simulate(o)
        | Command::Run(o) => o,
        Command::Sweep { options, .. } => options,
    };
    let config = options.config()?;
    let outcome = match &cli.command {
        Command::Ingest(_) => pipeline::ingest(&config),
        Command::Fit(_) => pipeline::run(&config, Goal::Fit),
        Command::Match(_) => pipeline::run(&config, Goal::Match),
        Command::Balance(_) => pipeline::run(&config, Goal::Balance),
        Command::Estimate(_) => pipeline::run(&config, Goal::Estimate),
        Command::Sensitivity(_) => pipeline::run(&config, Goal::Sensitivity),
        Command::Simulate(_) => pipeline::simulate(&config),
        Command::Run(_) => pipeline::run_pipeline(&config),
        Command::Sweep { group, .. } => {
            let field: Field = group.parse().with_context(|| format!("--group {group}"))?;
            pipeline::sweep(&config, field)
        }
    };
    finish(outcome, &output_dir(&config))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
