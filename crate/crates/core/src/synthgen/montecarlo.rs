use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SyntheticSpec;
use crate::effects::{
    aipw_with_scores, att_matched, decimal_difference, fit_outcome_models, ipw_with_scores, regression_imputation,
    Estimand, Trim,
};
use crate::glm::{fit, DesignSpec, Link};
use crate::psmatch::{common_support, nn_match, MatchOptions, Scored};
use crate::stats::normal_quantile;
use crate::tabular::{AnalysisFrame, Field, Wave};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McEstimator {
    /// Matched ATT in the post wave.
    Psm,
    PsmDid,
    Ipw,
    IpwDid,
    Aipw,
    AipwDid,
    /// Regression imputation from the per-arm outcome models.
    Regression,
    RegressionDid,
}

impl McEstimator {
    pub const ALL: [McEstimator; 8] = [
        McEstimator::Psm,
        McEstimator::PsmDid,
        McEstimator::Ipw,
        McEstimator::IpwDid,
        McEstimator::Aipw,
        McEstimator::AipwDid,
        McEstimator::Regression,
        McEstimator::RegressionDid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            McEstimator::Psm => "psm",
            McEstimator::PsmDid => "psm_did",
            McEstimator::Ipw => "ipw",
            McEstimator::IpwDid => "ipw_did",
            McEstimator::Aipw => "aipw",
            McEstimator::AipwDid => "aipw_did",
            McEstimator::Regression => "regression",
            McEstimator::RegressionDid => "regression_did",
        }
    }

    fn is_did(self) -> bool {
        matches!(
            self,
            McEstimator::PsmDid | McEstimator::IpwDid | McEstimator::AipwDid | McEstimator::RegressionDid
        )
    }

    fn base(self) -> McEstimator {
        match self {
            McEstimator::PsmDid => McEstimator::Psm,
            McEstimator::IpwDid => McEstimator::Ipw,
            McEstimator::AipwDid => McEstimator::Aipw,
            McEstimator::RegressionDid => McEstimator::Regression,
            other => other,
        }
    }
}

impl fmt::Display for McEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for McEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        McEstimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

/// Which model, if any, is fitted without `omitted` on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspecification {
    #[default]
    None,
    Propensity,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub replications: usize,
    pub estimators: Vec<McEstimator>,
    #[serde(default)]
    pub misspecify: Misspecification,
    #[serde(default = "default_omitted")]
    pub omitted: Field,
    #[serde(default = "DesignSpec::standard")]
    pub design: DesignSpec,
    #[serde(default)]
    pub link: Link,
    #[serde(default)]
    pub trim: Trim,
}

fn default_omitted() -> Field {
    Field::WealthIndex
}

impl MonteCarloConfig {
    pub fn new(replications: usize, estimators: Vec<McEstimator>) -> Self {
        MonteCarloConfig {
            replications,
            estimators,
            misspecify: Misspecification::None,
            omitted: default_omitted(),
            design: DesignSpec::standard(),
            link: Link::Logit,
            trim: Trim::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("no estimators requested")]
    NoEstimators,
    #[error("replication {index} (seed {seed}) failed in {stage}: {message}")]
    Replication {
        index: usize,
        seed: u64,
        stage: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub estimator: McEstimator,
    pub mean: f64,
    /// `mean − true_att`.
    pub bias: f64,
    pub rmse: f64,
    /// Standard deviation of the estimates across replications.
    pub empirical_se: f64,
    /// Average of the per-replication standard errors.
    pub mean_se: f64,
    /// Share of replications whose 95% interval covers the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub rows: Vec<McRow>,
    pub replications: usize,
    pub seed: u64,
    pub true_att: f64,
    pub n_per_wave: usize,
}

impl MonteCarloReport {
    pub fn row(&self, estimator: McEstimator) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }
}

type Estimate = (f64, f64);

struct Failure {
    stage: &'static str,
    message: String,
}

fn fail(stage: &'static str) -> impl Fn(String) -> Failure {
    move |message| Failure { stage, message }
}

/// Post-wave or single-wave estimates for the requested base estimators.
fn wave_estimates(
    frame: &AnalysisFrame,
    config: &MonteCarloConfig,
    wanted: &[McEstimator],
) -> Result<Vec<(McEstimator, Estimate)>, Failure> {
    let needs_ps = wanted
        .iter()
        .any(|e| matches!(e, McEstimator::Psm | McEstimator::Ipw | McEstimator::Aipw));
    let needs_outcome = wanted
        .iter()
        .any(|e| matches!(e, McEstimator::Aipw | McEstimator::Regression));
    let ps_design = match config.misspecify {
        Misspecification::Propensity => config.design.without(config.omitted),
        _ => config.design.clone(),
    };
    let out_design = match config.misspecify {
        Misspecification::Outcome => config.design.without(config.omitted),
        _ => config.design.clone(),
    };
    let scores = if needs_ps {
        let model = fit(frame, &ps_design, config.link).map_err(|e| fail("fit")(e.to_string()))?;
        model.score_frame(frame)
    } else {
        Vec::new()
    };
    let models = if needs_outcome {
        Some(fit_outcome_models(frame, &out_design, Field::LpgAccess).map_err(|e| fail("outcome")(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(wanted.len());
    for &e in wanted {
        let est = match e {
            McEstimator::Psm => {
                let (mut t, mut c) = (Vec::new(), Vec::new());
                for (i, (r, s)) in frame.records.iter().zip(&scores).enumerate() {
                    if r.treatment { &mut t } else { &mut c }.push(Scored::new(i, *s));
                }
                let region = common_support(&t, &c).map_err(|e| fail("support")(e.to_string()))?;
                let sample = nn_match(&region.retain(&t), &region.retain(&c), MatchOptions::default())
                    .map_err(|e| fail("match")(e.to_string()))?;
                let att = att_matched(&sample, |id| frame.records.get(id).map(|r| r.lpg_access))
                    .map_err(|e| fail("att")(e.to_string()))?;
                (att.att, att.se)
            }
            McEstimator::Ipw => {
                let w = ipw_with_scores(frame, &scores, Field::LpgAccess, Estimand::Atet, config.trim)
                    .map_err(|e| fail("ipw")(e.to_string()))?;
                (w.value, w.robust_se)
            }
            McEstimator::Aipw => {
                let m = models.as_ref().expect("outcome models fitted");
                let w = aipw_with_scores(frame, &scores, m, Field::LpgAccess, Estimand::Atet, config.trim)
                    .map_err(|e| fail("aipw")(e.to_string()))?;
                (w.value, w.robust_se)
            }
            McEstimator::Regression => {
                let m = models.as_ref().expect("outcome models fitted");
                let w = regression_imputation(frame, m, Estimand::Atet).map_err(|e| fail("regression")(e.to_string()))?;
                (w.value, w.robust_se)
            }
            _ => unreachable!("only base estimators reach a single wave"),
        };
        out.push((e, est));
    }
    Ok(out)
}

fn replicate(spec: &SyntheticSpec, config: &MonteCarloConfig) -> Result<Vec<Estimate>, Failure> {
    let mut bases: Vec<McEstimator> = config.estimators.iter().map(|e| e.base()).collect();
    bases.sort_by_key(|e| e.name());
    bases.dedup();
    let needs_pre = config.estimators.iter().any(|e| e.is_did());
    let post_frame = spec.generate(Wave::Post).map_err(|e| fail("generate")(e.to_string()))?;
    let post = wave_estimates(&post_frame, config, &bases)?;
    let pre = if needs_pre {
        let pre_frame = spec.generate(Wave::Pre).map_err(|e| fail("generate")(e.to_string()))?;
        let pre_bases: Vec<McEstimator> = config
            .estimators
            .iter()
            .filter(|e| e.is_did())
            .map(|e| e.base())
            .collect();
        wave_estimates(&pre_frame, config, &pre_bases)?
    } else {
        Vec::new()
    };
    let lookup = |v: &[(McEstimator, Estimate)], e: McEstimator| v.iter().find(|(k, _)| *k == e).map(|(_, x)| *x);
    Ok(config
        .estimators
        .iter()
        .map(|&e| {
            let b = lookup(&post, e.base()).expect("estimated");
            if e.is_did() {
                let a = lookup(&pre, e.base()).expect("estimated");
                (decimal_difference(b.0, a.0), a.1.hypot(b.1))
            } else {
                b
            }
        })
        .collect())
}

/// Runs replication `r` with seed `spec.seed + r` and aggregates the
/// estimates against `spec.true_att`.
pub fn monte_carlo(spec: &SyntheticSpec, config: &MonteCarloConfig) -> Result<MonteCarloReport, McError> {
    if config.replications < 2 {
        return Err(McError::TooFewReplications(config.replications));
    }
    if config.estimators.is_empty() {
        return Err(McError::NoEstimators);
    }
    let per_rep: Vec<Vec<Estimate>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed.wrapping_add(r as u64);
            replicate(&spec.with_seed(seed), config).map_err(|f| McError::Replication {
                index: r,
                seed,
                stage: f.stage,
                message: f.message,
            })
        })
        .collect::<Result<_, _>>()?;
    let z = normal_quantile(0.975);
    let reps = config.replications as f64;
    let truth = spec.true_att;
    let rows = config
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &estimator)| {
            let vals: Vec<Estimate> = per_rep.iter().map(|v| v[k]).collect();
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / reps;
            let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (reps - 1.0);
            let mse = vals.iter().map(|v| (v.0 - truth).powi(2)).sum::<f64>() / reps;
            let covered = vals.iter().filter(|v| (v.0 - truth).abs() <= z * v.1).count();
            McRow {
                estimator,
                mean,
                bias: mean - truth,
                rmse: mse.sqrt(),
                empirical_se: var.sqrt(),
                mean_se: vals.iter().map(|v| v.1).sum::<f64>() / reps,
                coverage: covered as f64 / reps,
            }
        })
        .collect();
    Ok(MonteCarloReport {
        rows,
        replications: config.replications,
        seed: spec.seed,
        true_att: truth,
        n_per_wave: spec.n_per_wave,
    })
}

pub fn render_monte_carlo(report: &MonteCarloReport) -> String {
    let mut out = String::from("estimator,true_att,mean,bias,rmse,empirical_se,mean_se,coverage95,replications,seed,n_per_wave\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{},{},{}\n",
            r.estimator,
            report.true_att,
            r.mean,
            r.bias,
            r.rmse,
            r.empirical_se,
            r.mean_se,
            r.coverage,
            report.replications,
            report.seed,
            report.n_per_wave
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for e in McEstimator::ALL {
            assert_eq!(e.name().parse::<McEstimator>(), Ok(e));
        }
        assert!("kernel".parse::<McEstimator>().is_err());
    }

    #[test]
    fn rejects_single_replication() {
        let spec = SyntheticSpec::benchmark();
        let cfg = MonteCarloConfig::new(1, vec![McEstimator::Ipw]);
        assert_eq!(monte_carlo(&spec, &cfg), Err(McError::TooFewReplications(1)));
        let cfg = MonteCarloConfig::new(2, vec![]);
        assert_eq!(monte_carlo(&spec, &cfg), Err(McError::NoEstimators));
    }

    #[test]
    fn two_replications_are_reproducible() {
        let mut spec = SyntheticSpec::benchmark();
        spec.n_per_wave = 2_000;
        let cfg = MonteCarloConfig::new(2, McEstimator::ALL.to_vec());
        let a = render_monte_carlo(&monte_carlo(&spec, &cfg).unwrap());
        let b = render_monte_carlo(&monte_carlo(&spec, &cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + McEstimator::ALL.len());
    }
}
