use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GlmError;
use crate::linalg::DesignMatrix;
use crate::tabular::{Field, ObservationRecord};

/// How integer-coded categorical covariates enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalPolicy {
    /// One coefficient per variable on the raw code.
    #[default]
    RawCodes,
    /// One indicator per observed level, lowest level as reference.
    Indicators,
}

/// Ordered covariate list of the treatment-assignment equation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    covariates: Vec<Field>,
    #[serde(default)]
    categorical: CategoricalPolicy,
}

impl DesignSpec {
    pub fn new(covariates: Vec<Field>, categorical: CategoricalPolicy) -> Result<Self, GlmError> {
        let mut seen = BTreeSet::new();
        for f in &covariates {
            if !seen.insert(*f) {
                return Err(GlmError::InvalidDesign(format!("duplicate covariate `{f}`")));
            }
            if f.is_boolean() {
                return Err(GlmError::InvalidDesign(format!(
                    "`{f}` is a treatment or outcome and cannot be a regressor"
                )));
            }
            if matches!(f, Field::HouseholdId | Field::Wave | Field::Zone) {
                return Err(GlmError::InvalidDesign(format!("`{f}` cannot be a regressor")));
            }
        }
        Ok(DesignSpec {
            covariates,
            categorical,
        })
    }

    /// The household covariates of the assignment equation, in equation order.
    /// The treatment flag itself is never a regressor.
    pub fn standard() -> Self {
        DesignSpec::new(
            vec![
                Field::State,
                Field::HhSize,
                Field::UrbanRural,
                Field::Age,
                Field::Religion,
                Field::Caste,
                Field::WealthIndex,
                Field::Education,
                Field::Gender,
            ],
            CategoricalPolicy::RawCodes,
        )
        .expect("standard design is valid")
    }

    pub fn covariates(&self) -> &[Field] {
        &self.covariates
    }

    pub fn categorical(&self) -> CategoricalPolicy {
        self.categorical
    }

    pub fn with_policy(mut self, policy: CategoricalPolicy) -> Self {
        self.categorical = policy;
        self
    }

    /// The same design without `field`.
    pub fn without(&self, field: Field) -> Self {
        DesignSpec {
            covariates: self.covariates.iter().copied().filter(|f| *f != field).collect(),
            categorical: self.categorical,
        }
    }

    /// Expands the spec into concrete columns (excluding the intercept).
    pub fn columns(&self, records: &[&ObservationRecord]) -> Vec<DesignColumn> {
        let mut cols = Vec::new();
        for &f in &self.covariates {
            if self.categorical == CategoricalPolicy::Indicators && f.is_categorical() {
                let levels: BTreeSet<i64> = records
                    .iter()
                    .filter_map(|r| f.numeric(r))
                    .map(|v| v as i64)
                    .collect();
                cols.extend(levels.into_iter().skip(1).map(|l| DesignColumn::Indicator(f, l)));
            } else {
                cols.push(DesignColumn::Raw(f));
            }
        }
        cols
    }
}

/// One non-intercept column of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignColumn {
    Raw(Field),
    Indicator(Field, i64),
}

impl DesignColumn {
    pub fn name(&self) -> String {
        match self {
            DesignColumn::Raw(f) => f.name().to_string(),
            DesignColumn::Indicator(f, l) => format!("{}[{}]", f.name(), l),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DesignColumn::Raw(f) => f.label().to_string(),
            DesignColumn::Indicator(f, l) => format!("{}[{}]", f.label(), l),
        }
    }

    pub fn field(&self) -> Field {
        match self {
            DesignColumn::Raw(f) | DesignColumn::Indicator(f, _) => *f,
        }
    }

    pub fn eval<S: CovariateSource + ?Sized>(&self, src: &S) -> Option<f64> {
        match *self {
            DesignColumn::Raw(f) => src.covariate(f),
            DesignColumn::Indicator(f, l) => src.covariate(f).map(|v| f64::from(v as i64 == l)),
        }
    }

    pub fn parse(s: &str) -> Result<Self, GlmError> {
        let bad = || GlmError::Persist(format!("bad column `{s}`"));
        if let Some(open) = s.find('[') {
            let field: Field = s[..open].parse().map_err(|_| bad())?;
            let level = s[open + 1..]
                .strip_suffix(']')
                .and_then(|v| v.parse::<i64>().ok())
                .ok_or_else(bad)?;
            Ok(DesignColumn::Indicator(field, level))
        } else {
            Ok(DesignColumn::Raw(s.parse().map_err(|_| bad())?))
        }
    }
}

impl fmt::Display for DesignColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Anything that can supply covariate values by field.
pub trait CovariateSource {
    fn covariate(&self, field: Field) -> Option<f64>;
}

impl CovariateSource for ObservationRecord {
    fn covariate(&self, field: Field) -> Option<f64> {
        field.numeric(self)
    }
}

impl CovariateSource for HashMap<Field, f64> {
    fn covariate(&self, field: Field) -> Option<f64> {
        self.get(&field).copied()
    }
}

impl CovariateSource for BTreeMap<Field, f64> {
    fn covariate(&self, field: Field) -> Option<f64> {
        self.get(&field).copied()
    }
}

pub(crate) fn build_matrix(columns: &[DesignColumn], records: &[&ObservationRecord]) -> DesignMatrix {
    let p = columns.len() + 1;
    let mut data = Vec::with_capacity(records.len() * p);
    for r in records {
        data.push(1.0);
        for c in columns {
            data.push(c.eval(*r).expect("record fields are always present"));
        }
    }
    DesignMatrix {
        n: records.len(),
        p,
        data,
    }
}
