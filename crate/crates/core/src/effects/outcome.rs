//! Linear-probability outcome regressions, fitted separately per arm.

use super::EffectError;
use crate::glm::{CovariateSource, DesignColumn, DesignSpec};
use crate::linalg::{accumulate, first_dependent_column, inverse_spd, solve_spd};
use crate::tabular::{AnalysisFrame, Field, ObservationRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub columns: Vec<DesignColumn>,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// Heteroskedasticity-robust (HC0) covariance, row-major `p × p`.
    pub covariance: Vec<f64>,
    pub n_obs: usize,
}

impl OutcomeModel {
    pub fn predict<S: CovariateSource + ?Sized>(&self, src: &S) -> f64 {
        let mut y = self.coefficients[0];
        for (c, b) in self.columns.iter().zip(&self.coefficients[1..]) {
            y += b * c.eval(src).expect("covariate present");
        }
        y
    }

    /// Design row `(1, x₁, …)` of a record.
    pub fn row<S: CovariateSource + ?Sized>(&self, src: &S) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.columns.iter().map(|c| c.eval(src).expect("covariate present")))
            .collect()
    }

    /// `aᵀ V a` for the coefficient covariance `V`.
    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        let p = self.coefficients.len();
        (0..p)
            .map(|i| (0..p).map(|j| a[i] * self.covariance[i * p + j] * a[j]).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModels {
    pub treated: OutcomeModel,
    pub control: OutcomeModel,
}

pub(crate) fn outcome_value(field: Field, rec: &ObservationRecord) -> Result<f64, EffectError> {
    field
        .flag(rec)
        .filter(|_| field != Field::Treatment)
        .map(|b| f64::from(u8::from(b)))
        .ok_or_else(|| EffectError::NotAnOutcome(field.name().to_string()))
}

fn ols(columns: &[DesignColumn], records: &[&ObservationRecord], outcome: Field, arm: &'static str) -> Result<OutcomeModel, EffectError> {
    let p = columns.len() + 1;
    let fail = |reason: String| EffectError::OutcomeModel { arm, reason };
    if records.len() < p {
        return Err(fail(format!("{} observations for {p} coefficients", records.len())));
    }
    let ys: Vec<f64> = records
        .iter()
        .map(|r| outcome_value(outcome, r))
        .collect::<Result<_, _>>()?;
    let row = |r: &ObservationRecord| -> Vec<f64> {
        std::iter::once(1.0)
            .chain(columns.iter().map(|c| c.eval(r).expect("covariate present")))
            .collect()
    };
    let acc = accumulate(records.len(), p, |i, acc| acc.add_row(&row(records[i]), 1.0, ys[i]));
    let gram = acc.gram();
    if let Some(j) = first_dependent_column(&gram) {
        let name = if j == 0 { "Constant".to_string() } else { columns[j - 1].name() };
        return Err(fail(format!("column `{name}` is collinear within the arm")));
    }
    let beta = solve_spd(&gram, &acc.rhs()).ok_or_else(|| fail("normal equations are singular".into()))?;
    let beta: Vec<f64> = beta.iter().copied().collect();
    let meat = accumulate(records.len(), p, |i, acc| {
        let x = row(records[i]);
        let e = ys[i] - x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        acc.add_row(&x, e * e, 0.0);
    })
    .gram();
    let bread = inverse_spd(&gram).ok_or_else(|| fail("normal equations are singular".into()))?;
    let cov = &bread * meat * &bread;
    Ok(OutcomeModel {
        columns: columns.to_vec(),
        coefficients: beta,
        covariance: (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect(),
        n_obs: records.len(),
    })
}

/// Fits `E[Y | x, D = d]` by least squares on each arm, using the design
/// columns that `spec` expands to on the whole frame.
pub fn fit_outcome_models(frame: &AnalysisFrame, spec: &DesignSpec, outcome: Field) -> Result<OutcomeModels, EffectError> {
    let all: Vec<&ObservationRecord> = frame.records.iter().collect();
    let columns = spec.columns(&all);
    let (treated, control): (Vec<&ObservationRecord>, Vec<&ObservationRecord>) = all.iter().partition(|r| r.treatment);
    Ok(OutcomeModels {
        treated: ols(&columns, &treated, outcome, "treated")?,
        control: ols(&columns, &control, outcome, "control")?,
    })
}
