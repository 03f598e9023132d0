use crate::glm::FittedPropensityModel;
use crate::stats::{mean, sample_variance};
use crate::tabular::{Field, ObservationRecord};

use super::MatchError;

/// |%bias| must stay below this after matching.
pub const BIAS_THRESHOLD: f64 = 5.0;
pub const RUBIN_B_THRESHOLD: f64 = 25.0;
pub const RUBIN_R_RANGE: (f64, f64) = (0.5, 2.0);

/// `100 (mean_T − mean_C) / sqrt((var_T + var_C) / 2)` with `n − 1`
/// variances. `None` when the pooled variance is zero or a group has fewer
/// than two values.
pub fn standardized_bias(treated: &[f64], control: &[f64]) -> Option<f64> {
    let vt = sample_variance(treated)?;
    let vc = sample_variance(control)?;
    let pooled = ((vt + vc) / 2.0).sqrt();
    if pooled <= 0.0 || !pooled.is_finite() {
        return None;
    }
    Some(100.0 * (mean(treated)? - mean(control)?) / pooled)
}

fn variance_ratio(treated: &[f64], control: &[f64]) -> Option<f64> {
    let vc = sample_variance(control)?;
    if vc <= 0.0 {
        return None;
    }
    Some(sample_variance(treated)? / vc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub field: Field,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub pct_bias: Option<f64>,
    /// Covariate variance ratio, treated over control.
    pub variance_ratio: Option<f64>,
}

impl BalanceRow {
    pub fn passes(&self) -> bool {
        self.pct_bias.is_some_and(|b| b.abs() < BIAS_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    /// Mean of |%bias| over covariates with a defined bias.
    pub mean_abs_bias: f64,
    /// |standardized bias| of the linear index, in percent.
    pub rubin_b: Option<f64>,
    /// Propensity-score variance ratio, treated over control.
    pub rubin_r: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl BalanceReport {
    pub fn bias_ok(&self) -> bool {
        self.rows.iter().all(BalanceRow::passes)
    }

    pub fn rubin_b_ok(&self) -> bool {
        self.rubin_b.is_some_and(|b| b < RUBIN_B_THRESHOLD)
    }

    pub fn rubin_r_ok(&self) -> bool {
        self.rubin_r
            .is_some_and(|r| r >= RUBIN_R_RANGE.0 && r <= RUBIN_R_RANGE.1)
    }

    pub fn max_abs_bias(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.pct_bias)
            .fold(0.0, |m, b| m.max(b.abs()))
    }
}

/// Covariate balance between a treated group and its (matched) controls.
pub fn balance_report(
    treated: &[&ObservationRecord],
    controls: &[&ObservationRecord],
    model: &FittedPropensityModel,
) -> Result<BalanceReport, MatchError> {
    if treated.is_empty() || controls.is_empty() {
        return Err(MatchError::EmptySample);
    }
    let column = |group: &[&ObservationRecord], f: Field| -> Vec<f64> {
        group.iter().map(|r| f.numeric(r).expect("numeric covariate")).collect()
    };
    let rows: Vec<BalanceRow> = model
        .fields()
        .into_iter()
        .map(|f| {
            let t = column(treated, f);
            let c = column(controls, f);
            BalanceRow {
                field: f,
                treated_mean: mean(&t).unwrap_or(f64::NAN),
                control_mean: mean(&c).unwrap_or(f64::NAN),
                pct_bias: standardized_bias(&t, &c),
                variance_ratio: variance_ratio(&t, &c),
            }
        })
        .collect();
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.pct_bias.map(f64::abs)).collect();
    let mean_abs_bias = mean(&defined).unwrap_or(0.0);

    let index = |group: &[&ObservationRecord]| -> Vec<f64> {
        group.iter().map(|r| model.linear_index(*r).expect("model fields present")).collect()
    };
    let ps = |group: &[&ObservationRecord]| -> Vec<f64> {
        group.iter().map(|r| model.predict(*r).expect("model fields present")).collect()
    };
    let rubin_b = standardized_bias(&index(treated), &index(controls)).map(f64::abs);
    let rubin_r = variance_ratio(&ps(treated), &ps(controls));
    Ok(BalanceReport {
        rows,
        mean_abs_bias,
        rubin_b,
        rubin_r,
        n_treated: treated.len(),
        n_control: controls.len(),
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "NA".to_string(),
    }
}

/// Per-covariate table: `sample,Variable,Treated,Control,%bias,Rubin's R,pass`.
pub fn render_balance(sample: &str, report: &BalanceReport, with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("sample,Variable,Treated,Control,%bias,Rubin's R,pass\n");
    }
    for r in &report.rows {
        out.push_str(&format!(
            "{sample},{},{:.3},{:.3},{},{},{}\n",
            r.field.label(),
            r.treated_mean,
            r.control_mean,
            opt(r.pct_bias, 1),
            opt(r.variance_ratio, 2),
            r.passes()
        ));
    }
    out
}

/// Summary row: `sample,mean_bias,rubin_b,rubin_r,bias_ok,rubin_b_ok,rubin_r_ok`.
pub fn render_balance_summary(sample: &str, report: &BalanceReport, with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("sample,mean_bias,rubin_b,rubin_r,bias_ok,rubin_b_ok,rubin_r_ok\n");
    }
    out.push_str(&format!(
        "{sample},{:.1},{},{},{},{},{}\n",
        report.mean_abs_bias,
        opt(report.rubin_b, 1),
        opt(report.rubin_r, 2),
        report.bias_ok(),
        report.rubin_b_ok(),
        report.rubin_r_ok()
    ));
    out
}
