//! Config-driven end-to-end runs: fit, support, match, balance, estimate,
//! DiD, weighting estimators and sensitivity, written as a report bundle.

mod report;
mod run;
mod sweep;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{render_summary, ReportFile, RunOutcome, INCOMPLETE_MARKER};
pub use run::{analyze_wave, ingest, load_inputs, run, run_pipeline, simulate, Goal, WaveAnalysis};
pub use sweep::{render_sweep, subgroup_sweep, sweep, SkippedGroup, SweepReport, SweepRow};

use crate::effects::{Estimand, Trim};
use crate::glm::{CategoricalPolicy, DesignSpec, Link};
use crate::psmatch::MatchOptions;
use crate::sensitivity::{GammaGrid, MhOptions, MomentMethod, Stratification};
use crate::synthgen::{McEstimator, Misspecification};
use crate::tabular::{Field, LoadOptions, Predicate, ZoneMap};

/// Output directory used when neither the config nor the caller names one.
pub const DEFAULT_OUTPUT_DIR: &str = "progeval-out";

/// Pipeline stage, reported with every failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Filter,
    Fit,
    Support,
    Match,
    Balance,
    Estimate,
    Sensitivity,
    Simulate,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Filter => "filter",
            Stage::Fit => "fit",
            Stage::Support => "support",
            Stage::Match => "match",
            Stage::Balance => "balance",
            Stage::Estimate => "estimate",
            Stage::Sensitivity => "sensitivity",
            Stage::Simulate => "simulate",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: message.to_string(),
        }
    }
}

pub(crate) fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// Effect estimators a pipeline run can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Estimator {
    Psm,
    Ipw,
    Aipw,
    Regression,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Psm => "psm",
            Estimator::Ipw => "ipw",
            Estimator::Aipw => "aipw",
            Estimator::Regression => "regression",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psm" => Some(Estimator::Psm),
            "ipw" => Some(Estimator::Ipw),
            "aipw" => Some(Estimator::Aipw),
            "regression" | "ra" => Some(Estimator::Regression),
            _ => None,
        }
    }
}

/// Flat, documented run configuration. Every key can be given in a TOML file
/// and overridden individually (see [`PipelineConfig::set`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Pre-treatment wave file.
    pub pre: Option<PathBuf>,
    /// Post-treatment wave file.
    pub post: Option<PathBuf>,
    /// Synthetic spec file; both waves are generated instead of read.
    pub synthetic: Option<PathBuf>,
    /// Generate both waves from the built-in benchmark spec.
    pub benchmark: bool,
    /// Overrides the synthetic spec's wave size.
    pub n_per_wave: Option<usize>,
    /// `,`, `tab` or any single character.
    pub delimiter: String,
    /// State → zone table; the bundled map when absent.
    pub zone_map: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Overrides the synthetic spec's seed.
    pub seed: Option<u64>,
    pub link: Link,
    /// Propensity covariates in equation order.
    pub covariates: Vec<String>,
    pub categorical: CategoricalPolicy,
    pub outcome: String,
    pub estimand: Estimand,
    /// Any of `psm`, `ipw`, `aipw`, `regression`.
    pub estimators: Vec<String>,
    pub caliper: Option<f64>,
    pub trim_lower: f64,
    pub trim_upper: f64,
    pub gamma_start: f64,
    pub gamma_stop: f64,
    pub gamma_step: f64,
    pub mh_method: MomentMethod,
    pub mh_stratification: Stratification,
    /// Conjunctive filters such as `zone==NorthEast`.
    pub subgroups: Vec<String>,
    pub density_bins: usize,
    /// Sweep groups with fewer treated or control units in either wave are skipped.
    pub min_group_size: usize,
    /// Monte-Carlo replications for `simulate`; 0 only writes the waves.
    pub replications: usize,
    pub mc_estimators: Vec<McEstimator>,
    pub misspecify: Misspecification,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let trim = Trim::default();
        let grid = GammaGrid::default();
        PipelineConfig {
            pre: None,
            post: None,
            synthetic: None,
            benchmark: false,
            n_per_wave: None,
            delimiter: ",".into(),
            zone_map: None,
            output_dir: None,
            seed: None,
            link: Link::Logit,
            covariates: DesignSpec::standard()
                .covariates()
                .iter()
                .map(|f| f.name().to_string())
                .collect(),
            categorical: CategoricalPolicy::RawCodes,
            outcome: Field::LpgAccess.name().into(),
            estimand: Estimand::Atet,
            estimators: ["psm", "ipw", "aipw"].map(String::from).to_vec(),
            caliper: None,
            trim_lower: trim.lower,
            trim_upper: trim.upper,
            gamma_start: grid.start,
            gamma_stop: grid.stop,
            gamma_step: grid.step,
            mh_method: MomentMethod::Exact,
            mh_stratification: Stratification::Pooled,
            subgroups: Vec::new(),
            density_bins: 20,
            min_group_size: 50,
            replications: 0,
            mc_estimators: vec![McEstimator::PsmDid, McEstimator::IpwDid, McEstimator::AipwDid],
            misspecify: Misspecification::None,
        }
    }
}

/// Keys holding lists; overrides split their value on commas.
const LIST_KEYS: [&str; 4] = ["covariates", "estimators", "subgroups", "mc_estimators"];
/// Keys holding strings or paths; overrides never reinterpret their value.
const STRING_KEYS: [&str; 8] = [
    "pre",
    "post",
    "synthetic",
    "delimiter",
    "zone_map",
    "output_dir",
    "outcome",
    "link",
];

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(at(Stage::Config))
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one key from its textual form, as given on a command line.
    /// Unknown keys and ill-typed values are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), PipelineError> {
        let key = key.trim().trim_start_matches("--").replace('-', "_");
        let value = if LIST_KEYS.contains(&key.as_str()) {
            toml::Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| toml::Value::String(s.to_string()))
                    .collect(),
            )
        } else if STRING_KEYS.contains(&key.as_str()) {
            toml::Value::String(raw.to_string())
        } else {
            scalar(raw)
        };
        let mut table = toml::Table::try_from(&*self).map_err(at(Stage::Config))?;
        table.insert(key.clone(), value);
        *self = table
            .try_into()
            .map_err(|e| PipelineError::new(Stage::Config, format!("--{key}={raw}: {e}")))?;
        Ok(())
    }

    /// Checks every key and resolves names into typed settings.
    pub fn resolve(&self) -> Result<Settings, PipelineError> {
        let bad = |msg: String| PipelineError::new(Stage::Config, msg);
        let covariates = self
            .covariates
            .iter()
            .map(|c| c.parse::<Field>().map_err(|e| bad(format!("covariates: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let design = DesignSpec::new(covariates, self.categorical).map_err(|e| bad(e.to_string()))?;
        let outcome: Field = self.outcome.parse().map_err(|e| bad(format!("outcome: {e}")))?;
        if !outcome.is_boolean() || outcome == Field::Treatment {
            return Err(bad(format!("outcome `{}` must be lpg_access or firewood_use", self.outcome)));
        }
        let mut estimators = Vec::new();
        for name in &self.estimators {
            let e = Estimator::parse(name).ok_or_else(|| bad(format!("unknown estimator `{name}`")))?;
            if !estimators.contains(&e) {
                estimators.push(e);
            }
        }
        if estimators.is_empty() {
            return Err(bad("estimators: at least one is required".into()));
        }
        if let Some(c) = self.caliper {
            if !(c.is_finite() && c > 0.0) {
                return Err(bad(format!("caliper must be positive, got {c}")));
            }
        }
        let trim = Trim {
            lower: self.trim_lower,
            upper: self.trim_upper,
        };
        if !(0.0..1.0).contains(&trim.lower) || !(trim.lower < trim.upper && trim.upper <= 1.0) {
            return Err(bad("trimming bounds must satisfy 0 <= trim_lower < trim_upper <= 1".into()));
        }
        let grid = GammaGrid::new(self.gamma_start, self.gamma_stop, self.gamma_step).map_err(|e| bad(e.to_string()))?;
        let subgroups = self
            .subgroups
            .iter()
            .map(|s| s.parse::<Predicate>().map_err(|e| bad(format!("subgroups: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if self.density_bins < 2 {
            return Err(bad(format!("density_bins must be at least 2, got {}", self.density_bins)));
        }
        let delimiter = match self.delimiter.as_str() {
            "tab" | "\\t" | "\t" => b'\t',
            s if s.len() == 1 => s.as_bytes()[0],
            s => return Err(bad(format!("delimiter must be a single character or `tab`, got `{s}`"))),
        };
        let zones = match &self.zone_map {
            Some(p) => ZoneMap::from_path(p).map_err(|e| bad(e.to_string()))?,
            None => ZoneMap::default(),
        };
        Ok(Settings {
            design,
            link: self.link,
            outcome,
            estimand: self.estimand,
            estimators,
            matching: MatchOptions { caliper: self.caliper },
            trim,
            grid,
            mh: MhOptions {
                method: self.mh_method,
                stratification: self.mh_stratification,
            },
            subgroups,
            density_bins: self.density_bins,
            min_group_size: self.min_group_size,
            load: LoadOptions { delimiter },
            zones,
        })
    }

    /// The configured directory, else `fallback`, else [`DEFAULT_OUTPUT_DIR`].
    pub fn output_dir_or(&self, fallback: Option<PathBuf>) -> PathBuf {
        self.output_dir
            .clone()
            .or(fallback)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

fn scalar(raw: &str) -> toml::Value {
    let t = raw.trim();
    if let Ok(b) = t.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = t.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(x) = t.parse::<f64>() {
        return toml::Value::Float(x);
    }
    toml::Value::String(t.to_string())
}

/// A validated configuration with every name resolved.
#[derive(Debug, Clone)]
pub struct Settings {
    pub design: DesignSpec,
    pub link: Link,
    pub outcome: Field,
    pub estimand: Estimand,
    pub estimators: Vec<Estimator>,
    pub matching: MatchOptions,
    pub trim: Trim,
    pub grid: GammaGrid,
    pub mh: MhOptions,
    pub subgroups: Vec<Predicate>,
    pub density_bins: usize,
    pub min_group_size: usize,
    pub load: LoadOptions,
    pub zones: ZoneMap,
}

impl Settings {
    pub fn wants(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let s = PipelineConfig::default().resolve().unwrap();
        assert_eq!(s.design, DesignSpec::standard());
        assert_eq!(s.outcome, Field::LpgAccess);
        assert_eq!(s.estimators, vec![Estimator::Psm, Estimator::Ipw, Estimator::Aipw]);
        assert_eq!(s.grid.values().len(), 11);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.pre = Some("a.csv".into());
        c.subgroups = vec!["zone==NorthEast".into()];
        c.caliper = Some(0.01);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("colour = 1\n").is_err());
        assert!(PipelineConfig::default().set("colour", "1").is_err());
    }

    #[test]
    fn overrides_are_typed() {
        let mut c = PipelineConfig::from_toml("link = \"logit\"\ntrim_lower = 0.05\n").unwrap();
        c.set("link", "probit").unwrap();
        c.set("trim-lower", "0.02").unwrap();
        c.set("caliper", "0.5").unwrap();
        c.set("seed", "7").unwrap();
        c.set("estimators", "psm, aipw").unwrap();
        c.set("subgroups", "zone==East,caste==2").unwrap();
        c.set("output_dir", "123").unwrap();
        c.set("mh_method", "large_sample").unwrap();
        assert_eq!(c.link, Link::Probit);
        assert_eq!(c.trim_lower, 0.02);
        assert_eq!(c.caliper, Some(0.5));
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.estimators, vec!["psm", "aipw"]);
        assert_eq!(c.subgroups.len(), 2);
        assert_eq!(c.output_dir, Some(PathBuf::from("123")));
        assert_eq!(c.mh_method, MomentMethod::LargeSample);
        assert!(c.set("seed", "many").is_err());
        assert!(c.set("link", "cauchit").is_err());
    }

    #[test]
    fn resolve_rejects_bad_values() {
        let check = |k: &str, v: &str| {
            let mut c = PipelineConfig::default();
            c.set(k, v).unwrap();
            c.resolve().unwrap_err()
        };
        assert!(check("covariates", "age,colour").message.contains("colour"));
        assert!(check("covariates", "age,lpg_access").message.contains("regressor"));
        assert!(check("outcome", "age").message.contains("outcome"));
        assert!(check("estimators", "psm,matching").message.contains("matching"));
        assert!(check("trim_lower", "0.995").message.contains("trim"));
        assert!(check("gamma_step", "0").stage == Stage::Config);
        assert!(check("subgroups", "zone==Atlantis").message.contains("subgroups"));
        assert!(check("delimiter", ";;").message.contains("delimiter"));
        assert!(check("caliper", "-1").message.contains("caliper"));
    }

    #[test]
    fn delimiter_words() {
        let mut c = PipelineConfig::default();
        c.delimiter = "tab".into();
        assert_eq!(c.resolve().unwrap().load.delimiter, b'\t');
        c.delimiter = ";".into();
        assert_eq!(c.resolve().unwrap().load.delimiter, b';');
    }
}
