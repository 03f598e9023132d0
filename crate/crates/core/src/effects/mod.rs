//! Treatment-effect estimators: matched ATT, DiD of ATTs across two
//! cross-sections, inverse-probability weighting and AIPW.

mod matched;
mod outcome;
mod weighting;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matched::{att_matched, decimal_difference, did_of_att, AttEstimate, DidEstimate};
pub use outcome::{fit_outcome_models, OutcomeModel, OutcomeModels};
pub use weighting::{
    aipw, aipw_with_scores, ipw, ipw_with_scores, regression_imputation, Trim, WeightedEstimate,
    WeightingEstimator,
};

use crate::psmatch::UnitId;
use crate::stats::{stars, two_sided_p};

#[derive(Debug, Error, PartialEq)]
pub enum EffectError {
    #[error("no outcome for matched unit {0}")]
    MissingOutcome(UnitId),
    #[error("matched sample is empty")]
    EmptySample,
    #[error("`{0}` is not a binary outcome field")]
    NotAnOutcome(String),
    #[error("no {arm} observations left after trimming ({trimmed} outside [{lower}, {upper}])")]
    EmptyArm {
        arm: &'static str,
        trimmed: usize,
        lower: f64,
        upper: f64,
    },
    #[error("{records} records but {scores} propensity scores")]
    LengthMismatch { records: usize, scores: usize },
    #[error("trimming bounds must satisfy 0 <= lower < upper <= 1")]
    InvalidTrim,
    #[error("outcome model for the {arm} arm: {reason}")]
    OutcomeModel { arm: &'static str, reason: String },
    #[error("propensity model: {0}")]
    Propensity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ate")]
    Ate,
    /// Effect on the treated.
    #[default]
    #[serde(rename = "atet")]
    Atet,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Ate => "ATE",
            Estimand::Atet => "ATET",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "atet" | "att" => Ok(Estimand::Atet),
            other => Err(format!("unknown estimand `{other}` (expected ate or atet)")),
        }
    }
}

/// One line of the delimited estimates table.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub estimator: String,
    pub estimand: String,
    pub sample: String,
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl EstimateRow {
    pub fn t_stat(&self) -> f64 {
        self.value / self.se
    }

    pub fn p_value(&self) -> f64 {
        two_sided_p(self.t_stat())
    }
}

pub const ESTIMATES_HEADER: &str = "estimator,estimand,sample,value,se,t,p,n,stars";

pub fn render_estimates(rows: &[EstimateRow]) -> String {
    let mut out = format!("{ESTIMATES_HEADER}\n");
    for r in rows {
        let p = r.p_value();
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.3},{:.4},{},{}\n",
            r.estimator,
            r.estimand,
            r.sample,
            r.value,
            r.se,
            r.t_stat(),
            p,
            r.n,
            stars(p)
        ));
    }
    out
}
