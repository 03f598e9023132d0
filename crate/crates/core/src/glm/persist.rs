//! Small versioned text format for fitted models.
//!
//! ```text
//! progeval-model 1
//! link logit
//! categorical raw_codes
//! covariates state age caste
//! columns state age caste[3]
//! n_obs 1000
//! iterations 6
//! converged true
//! log_likelihood -612.3
//! max_abs_score 1.2e-11
//! coefficients b0 b1 ...
//! covariance c00 c01 ...        (one line per row)
//! ```
//!
//! Floats use the shortest representation that round-trips exactly.

use std::fmt::Write as _;

use super::{CategoricalPolicy, DesignColumn, DesignSpec, FittedPropensityModel, GlmError};
use crate::tabular::Field;

const MAGIC: &str = "progeval-model";
const VERSION: &str = "1";

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_model(model: &FittedPropensityModel) -> String {
    let p = model.dim();
    let mut s = String::new();
    let policy = match model.spec.categorical() {
        CategoricalPolicy::RawCodes => "raw_codes",
        CategoricalPolicy::Indicators => "indicators",
    };
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "link {}", model.link);
    let _ = writeln!(s, "categorical {policy}");
    let _ = writeln!(s, "covariates {}", join(model.spec.covariates().iter().map(|f| f.name())));
    let _ = writeln!(s, "columns {}", join(model.columns.iter().map(|c| c.name())));
    let _ = writeln!(s, "n_obs {}", model.n_obs);
    let _ = writeln!(s, "iterations {}", model.iterations);
    let _ = writeln!(s, "converged {}", model.converged);
    let _ = writeln!(s, "log_likelihood {}", model.log_likelihood);
    let _ = writeln!(s, "max_abs_score {}", model.max_abs_score);
    let _ = writeln!(s, "coefficients {}", join(&model.coefficients));
    for i in 0..p {
        let _ = writeln!(s, "covariance {}", join(&model.covariance[i * p..(i + 1) * p]));
    }
    s
}

pub fn read_model(text: &str) -> Result<FittedPropensityModel, GlmError> {
    let err = |m: &str| GlmError::Persist(m.to_string());
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| err("empty model file"))?;
    match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, VERSION] => {}
        [MAGIC, v] => return Err(GlmError::Persist(format!("unsupported model version {v}"))),
        _ => return Err(err("not a model file")),
    }

    let mut link = None;
    let mut policy = CategoricalPolicy::RawCodes;
    let mut covariates: Vec<Field> = Vec::new();
    let mut columns = Vec::new();
    let mut n_obs = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut log_likelihood = f64::NAN;
    let mut max_abs_score = f64::NAN;
    let mut coefficients: Vec<f64> = Vec::new();
    let mut covariance: Vec<f64> = Vec::new();

    let floats = |rest: &str| -> Result<Vec<f64>, GlmError> {
        rest.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| GlmError::Persist(format!("bad number `{t}`"))))
            .collect()
    };
    for line in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "link" => link = Some(rest.parse()?),
            "categorical" => {
                policy = match rest {
                    "raw_codes" => CategoricalPolicy::RawCodes,
                    "indicators" => CategoricalPolicy::Indicators,
                    _ => return Err(err("bad categorical policy")),
                }
            }
            "covariates" => {
                covariates = rest
                    .split_whitespace()
                    .map(|t| t.parse::<Field>().map_err(|_| GlmError::Persist(format!("bad field `{t}`"))))
                    .collect::<Result<_, _>>()?
            }
            "columns" => {
                columns = rest
                    .split_whitespace()
                    .map(DesignColumn::parse)
                    .collect::<Result<Vec<_>, _>>()?
            }
            "n_obs" => n_obs = rest.parse().map_err(|_| err("bad n_obs"))?,
            "iterations" => iterations = rest.parse().map_err(|_| err("bad iterations"))?,
            "converged" => converged = rest.parse().map_err(|_| err("bad converged flag"))?,
            "log_likelihood" => log_likelihood = rest.parse().map_err(|_| err("bad log_likelihood"))?,
            "max_abs_score" => max_abs_score = rest.parse().map_err(|_| err("bad max_abs_score"))?,
            "coefficients" => coefficients = floats(rest)?,
            "covariance" => covariance.extend(floats(rest)?),
            other => return Err(GlmError::Persist(format!("unknown key `{other}`"))),
        }
    }
    let p = columns.len() + 1;
    if coefficients.len() != p {
        return Err(err("coefficient count does not match columns"));
    }
    if covariance.len() != p * p {
        return Err(err("covariance is not p x p"));
    }
    Ok(FittedPropensityModel {
        link: link.ok_or_else(|| err("missing link"))?,
        spec: DesignSpec::new(covariates, policy)?,
        columns,
        coefficients,
        covariance,
        n_obs,
        iterations,
        converged,
        log_likelihood,
        max_abs_score,
    })
}
