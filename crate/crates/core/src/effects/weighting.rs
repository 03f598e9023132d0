//! Inverse-probability weighting, regression imputation and AIPW.
//!
//! Standard errors come from the per-observation influence contributions
//! with the propensity and outcome models treated as known.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::outcome::outcome_value;
use super::{EffectError, Estimand, EstimateRow, OutcomeModels};
use crate::glm::FittedPropensityModel;
use crate::stats::two_sided_p;
use crate::tabular::{AnalysisFrame, Field, ObservationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingEstimator {
    Ipw,
    Aipw,
    /// Regression imputation from the outcome models alone.
    Regression,
}

impl WeightingEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightingEstimator::Ipw => "IPW",
            WeightingEstimator::Aipw => "AIPW",
            WeightingEstimator::Regression => "RA",
        }
    }
}

impl fmt::Display for WeightingEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observations with a propensity outside `[lower, upper]` are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trim {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Trim {
    fn default() -> Self {
        Trim { lower: 0.01, upper: 0.99 }
    }
}

impl Trim {
    fn validate(self) -> Result<(), EffectError> {
        if (0.0..1.0).contains(&self.lower) && self.upper > self.lower && self.upper <= 1.0 {
            Ok(())
        } else {
            Err(EffectError::InvalidTrim)
        }
    }

    fn keeps(self, p: f64) -> bool {
        p >= self.lower && p <= self.upper && p > 0.0 && p < 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEstimate {
    pub estimand: Estimand,
    pub estimator: WeightingEstimator,
    pub value: f64,
    pub robust_se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// Observations used after trimming.
    pub n: usize,
    pub n_trimmed: usize,
}

impl WeightedEstimate {
    fn new(estimand: Estimand, estimator: WeightingEstimator, value: f64, se: f64, n: usize, n_trimmed: usize) -> Self {
        let t_stat = value / se;
        WeightedEstimate {
            estimand,
            estimator,
            value,
            robust_se: se,
            t_stat,
            p_value: two_sided_p(t_stat),
            n,
            n_trimmed,
        }
    }

    pub fn row(&self, sample: &str) -> EstimateRow {
        EstimateRow {
            estimator: self.estimator.as_str().into(),
            estimand: self.estimand.as_str().into(),
            sample: sample.into(),
            value: self.value,
            se: self.robust_se,
            n: self.n,
        }
    }
}

struct Unit<'a> {
    rec: &'a ObservationRecord,
    d: bool,
    y: f64,
    e: f64,
}

struct Kept<'a> {
    units: Vec<Unit<'a>>,
    n_trimmed: usize,
}

fn prepare<'a>(
    frame: &'a AnalysisFrame,
    scores: &[f64],
    outcome: Field,
    trim: Trim,
) -> Result<Kept<'a>, EffectError> {
    trim.validate()?;
    if scores.len() != frame.len() {
        return Err(EffectError::LengthMismatch {
            records: frame.len(),
            scores: scores.len(),
        });
    }
    let mut units = Vec::with_capacity(frame.len());
    let mut n_trimmed = 0;
    for (rec, &e) in frame.records.iter().zip(scores) {
        let y = outcome_value(outcome, rec)?;
        if trim.keeps(e) {
            units.push(Unit {
                rec,
                d: rec.treatment,
                y,
                e,
            });
        } else {
            n_trimmed += 1;
        }
    }
    for (arm, want) in [("treated", true), ("control", false)] {
        if !units.iter().any(|u| u.d == want) {
            return Err(EffectError::EmptyArm {
                arm,
                trimmed: n_trimmed,
                lower: trim.lower,
                upper: trim.upper,
            });
        }
    }
    Ok(Kept { units, n_trimmed })
}

fn propensities(frame: &AnalysisFrame, model: &FittedPropensityModel) -> Result<Vec<f64>, EffectError> {
    frame
        .records
        .iter()
        .map(|r| model.predict(r).map_err(|e| EffectError::Propensity(e.to_string())))
        .collect()
}

/// Normalized (Hájek) IPW with precomputed propensities. ATE weights are
/// `1/e` and `1/(1−e)`; ATET weights are `1` and `e/(1−e)`.
pub fn ipw_with_scores(
    frame: &AnalysisFrame,
    scores: &[f64],
    outcome: Field,
    estimand: Estimand,
    trim: Trim,
) -> Result<WeightedEstimate, EffectError> {
    let kept = prepare(frame, scores, outcome, trim)?;
    let weight = |u: &Unit| -> f64 {
        match (estimand, u.d) {
            (Estimand::Ate, true) => 1.0 / u.e,
            (Estimand::Ate, false) => 1.0 / (1.0 - u.e),
            (Estimand::Atet, true) => 1.0,
            (Estimand::Atet, false) => u.e / (1.0 - u.e),
        }
    };
    let (mut s1, mut s0, mut t1, mut t0) = (0.0, 0.0, 0.0, 0.0);
    for u in &kept.units {
        let w = weight(u);
        if u.d {
            s1 += w;
            t1 += w * u.y;
        } else {
            s0 += w;
            t0 += w * u.y;
        }
    }
    let (mu1, mu0) = (t1 / s1, t0 / s0);
    let var: f64 = kept
        .units
        .iter()
        .map(|u| {
            let w = weight(u);
            let c = if u.d { w * (u.y - mu1) / s1 } else { -w * (u.y - mu0) / s0 };
            c * c
        })
        .sum();
    Ok(WeightedEstimate::new(
        estimand,
        WeightingEstimator::Ipw,
        mu1 - mu0,
        var.sqrt(),
        kept.units.len(),
        kept.n_trimmed,
    ))
}

pub fn ipw(
    frame: &AnalysisFrame,
    model: &FittedPropensityModel,
    outcome: Field,
    estimand: Estimand,
    trim: Trim,
) -> Result<WeightedEstimate, EffectError> {
    ipw_with_scores(frame, &propensities(frame, model)?, outcome, estimand, trim)
}

/// Mean and standard error of a set of influence contributions.
fn mean_and_se(phi: &[f64]) -> (f64, f64) {
    let n = phi.len() as f64;
    let m = phi.iter().sum::<f64>() / n;
    let ss: f64 = phi.iter().map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (n - 1.0) / n).sqrt())
}

/// Augmented IPW with precomputed propensities.
///
/// ATE: mean of `m₁ − m₀ + D(Y − m₁)/e − (1−D)(Y − m₀)/(1−e)`.
/// ATET: `(1/n₁) Σ [D(Y − m₀) − (1−D) e/(1−e) (Y − m₀)]`.
pub fn aipw_with_scores(
    frame: &AnalysisFrame,
    scores: &[f64],
    models: &OutcomeModels,
    outcome: Field,
    estimand: Estimand,
    trim: Trim,
) -> Result<WeightedEstimate, EffectError> {
    let kept = prepare(frame, scores, outcome, trim)?;
    let n = kept.units.len();
    let (value, se) = match estimand {
        Estimand::Ate => {
            let phi: Vec<f64> = kept
                .units
                .iter()
                .map(|u| {
                    let m1 = models.treated.predict(u.rec);
                    let m0 = models.control.predict(u.rec);
                    let aug = if u.d { (u.y - m1) / u.e } else { -(u.y - m0) / (1.0 - u.e) };
                    m1 - m0 + aug
                })
                .collect();
            mean_and_se(&phi)
        }
        Estimand::Atet => {
            let n1 = kept.units.iter().filter(|u| u.d).count() as f64;
            let share = n1 / n as f64;
            let psi: Vec<f64> = kept
                .units
                .iter()
                .map(|u| {
                    let r0 = u.y - models.control.predict(u.rec);
                    if u.d {
                        r0 / share
                    } else {
                        -u.e / (1.0 - u.e) * r0 / share
                    }
                })
                .collect();
            let value = psi.iter().sum::<f64>() / n as f64;
            let ss: f64 = kept
                .units
                .iter()
                .zip(&psi)
                .map(|(u, p)| {
                    let c = p - if u.d { value / share } else { 0.0 };
                    c * c
                })
                .sum();
            (value, ss.sqrt() / n as f64)
        }
    };
    Ok(WeightedEstimate::new(estimand, WeightingEstimator::Aipw, value, se, n, kept.n_trimmed))
}

pub fn aipw(
    frame: &AnalysisFrame,
    model: &FittedPropensityModel,
    models: &OutcomeModels,
    outcome: Field,
    estimand: Estimand,
    trim: Trim,
) -> Result<WeightedEstimate, EffectError> {
    aipw_with_scores(frame, &propensities(frame, model)?, models, outcome, estimand, trim)
}

/// Mean of `m₁(x) − m₀(x)` over the whole frame (ATE) or the treated (ATET).
/// With linear outcome models this is `x̄ᵀ(β₁ − β₀)`; the standard error is
/// `sqrt(x̄ᵀ(V₁ + V₀)x̄)` from the robust coefficient covariances, with `x̄`
/// held fixed.
pub fn regression_imputation(
    frame: &AnalysisFrame,
    models: &OutcomeModels,
    estimand: Estimand,
) -> Result<WeightedEstimate, EffectError> {
    let target: Vec<&ObservationRecord> = frame
        .records
        .iter()
        .filter(|r| estimand == Estimand::Ate || r.treatment)
        .collect();
    if target.is_empty() {
        return Err(EffectError::EmptySample);
    }
    let n = target.len() as f64;
    let value = target
        .iter()
        .map(|r| models.treated.predict(*r) - models.control.predict(*r))
        .sum::<f64>()
        / n;
    let p = models.treated.coefficients.len();
    let mut xbar = vec![0.0; p];
    for r in &target {
        for (a, x) in xbar.iter_mut().zip(models.treated.row(*r)) {
            *a += x / n;
        }
    }
    let se = (models.treated.quadratic_form(&xbar) + models.control.quadratic_form(&xbar)).sqrt();
    Ok(WeightedEstimate::new(
        estimand,
        WeightingEstimator::Regression,
        value,
        se,
        target.len(),
        0,
    ))
}
