//! Binary-response GLMs (logit, probit) fitted by maximum likelihood.

mod design;
mod fit;
mod persist;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{CategoricalPolicy, CovariateSource, DesignColumn, DesignSpec};
pub use fit::{fit, fit_response, Objective};
pub use persist::{read_model, write_model};

use crate::stats::{normal_cdf, two_sided_p};
use crate::tabular::{AnalysisFrame, Field};

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("need at least one treated and one control record (treated={treated}, control={control})")]
    DegenerateResponse { treated: usize, control: usize },
    #[error("design is rank deficient: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),
    #[error("separation detected after {iterations} iterations: fitted probabilities reached 0 or 1; the likelihood has no finite maximum")]
    Separation { iterations: usize },
    #[error("no convergence within {0} iterations")]
    IterationLimit(usize),
    #[error("information matrix is singular")]
    Singular,
    #[error("record is missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("model file: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    /// Inverse link: index to probability.
    pub fn probability(self, z: f64) -> f64 {
        match self {
            Link::Logit => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Link::Probit => normal_cdf(z),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Link {
    type Err = GlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logit" | "logistic" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            other => Err(GlmError::InvalidDesign(format!("unknown link `{other}`"))),
        }
    }
}

/// A fitted treatment-assignment model. Coefficient 0 is the intercept;
/// the rest follow `columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPropensityModel {
    pub link: Link,
    pub spec: DesignSpec,
    pub columns: Vec<DesignColumn>,
    pub coefficients: Vec<f64>,
    /// Inverse observed information, row-major `p × p`.
    pub covariance: Vec<f64>,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Max-norm of the score vector at the returned coefficients.
    pub max_abs_score: f64,
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub p_value: f64,
}

impl FittedPropensityModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let p = self.dim();
        (0..p).map(|i| self.covariance[i * p + i].max(0.0).sqrt()).collect()
    }

    /// Linear index `z = γ₀ + Σ γ_j x_j`.
    pub fn linear_index<S: CovariateSource + ?Sized>(&self, src: &S) -> Result<f64, GlmError> {
        let mut z = self.coefficients[0];
        for (col, g) in self.columns.iter().zip(&self.coefficients[1..]) {
            let x = col
                .eval(src)
                .ok_or_else(|| GlmError::MissingCovariate(col.field().name().to_string()))?;
            z += g * x;
        }
        Ok(z)
    }

    /// Propensity of treatment, kept strictly inside (0, 1).
    pub fn predict<S: CovariateSource + ?Sized>(&self, src: &S) -> Result<f64, GlmError> {
        let p = self.link.probability(self.linear_index(src)?);
        Ok(p.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
    }

    /// Propensities for every record of a frame, in record order.
    pub fn score_frame(&self, frame: &AnalysisFrame) -> Vec<f64> {
        use rayon::prelude::*;
        frame
            .records
            .par_iter()
            .map(|r| self.predict(r).expect("records carry every field"))
            .collect()
    }

    /// Linear indices for every record of a frame, in record order.
    pub fn index_frame(&self, frame: &AnalysisFrame) -> Vec<f64> {
        use rayon::prelude::*;
        frame
            .records
            .par_iter()
            .map(|r| self.linear_index(r).expect("records carry every field"))
            .collect()
    }

    /// Raw fields that enter the model, in design order.
    pub fn fields(&self) -> Vec<Field> {
        self.spec.covariates().to_vec()
    }

    /// Coefficients with SEs and two-sided normal p-values. Rows follow the
    /// design order with the intercept (`Constant`) last.
    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        let se = self.std_errors();
        let row = |name: String, i: usize| {
            let b = self.coefficients[i];
            let p_value = if b == 0.0 { 1.0 } else { two_sided_p(b / se[i]) };
            CoefficientRow {
                name,
                coefficient: b,
                std_error: se[i],
                p_value,
            }
        };
        let mut rows: Vec<CoefficientRow> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| row(c.label(), j + 1))
            .collect();
        rows.push(row("Constant".to_string(), 0));
        rows
    }
}

/// Probability of treatment for one record under a fitted model.
pub fn predict_propensity<S: CovariateSource + ?Sized>(
    model: &FittedPropensityModel,
    record: &S,
) -> Result<f64, GlmError> {
    model.predict(record)
}

/// Delimited coefficient table: `Variable,Coefficient,SE,p-value`.
pub fn render_coefficient_table(rows: &[CoefficientRow]) -> String {
    let mut out = String::from("Variable,Coefficient,SE,p-value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.4}\n",
            r.name, r.coefficient, r.std_error, r.p_value
        ));
    }
    out
}
