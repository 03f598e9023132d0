use super::design::build_matrix;
use super::{DesignColumn, DesignSpec, FittedPropensityModel, GlmError, Link};
use crate::linalg::{accumulate, first_dependent_column, inverse_spd, solve_spd, CrossProducts, DesignMatrix};
use crate::stats::{normal_cdf, normal_pdf, normal_quantile};
use crate::tabular::{AnalysisFrame, Field, ObservationRecord};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const REL_LL_TOL: f64 = 1e-12;
const LL_NOISE: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;
/// Fitted probabilities this close to 0 or 1 mean the likelihood is still
/// climbing toward an infinite coefficient. The looser final threshold
/// catches fits whose score vanished on the way there.
const SEPARATION_EPS: f64 = 1e-10;
const SEPARATION_EPS_FINAL: f64 = 1e-8;

struct RowEval {
    ll: f64,
    /// d ll / d eta
    score: f64,
    /// expected information weight
    weight: f64,
    mu: f64,
}

fn ln_normal_cdf(z: f64) -> f64 {
    let c = normal_cdf(z);
    if c > 0.0 {
        c.ln()
    } else {
        // Mills-ratio asymptote for the far lower tail
        -0.5 * z * z - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[inline]
fn eval_row(link: Link, eta: f64, y: f64) -> RowEval {
    match link {
        Link::Logit => {
            let mu = link.probability(eta);
            let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
            RowEval {
                ll: y * eta - softplus,
                score: y - mu,
                weight: mu * (1.0 - mu),
                mu,
            }
        }
        Link::Probit => {
            let mu = link.probability(eta);
            let q = link.probability(-eta);
            let phi = normal_pdf(eta);
            let v = (mu * q).max(1e-300);
            RowEval {
                ll: y * ln_normal_cdf(eta) + (1.0 - y) * ln_normal_cdf(-eta),
                score: phi * (y - mu) / v,
                weight: phi * phi / v,
                mu,
            }
        }
    }
}

/// Negative second derivative of the row log-likelihood in eta.
fn observed_weight(link: Link, eta: f64, y: f64) -> f64 {
    match link {
        Link::Logit => {
            let mu = link.probability(eta);
            mu * (1.0 - mu)
        }
        Link::Probit => {
            let phi = normal_pdf(eta);
            if y > 0.5 {
                let lambda = phi / link.probability(eta).max(1e-300);
                lambda * (lambda + eta)
            } else {
                let lambda = phi / link.probability(-eta).max(1e-300);
                lambda * (lambda - eta)
            }
        }
    }
}

/// Binomial log-likelihood of a fixed design, for checking fitted models.
pub struct Objective {
    x: DesignMatrix,
    y: Vec<f64>,
    link: Link,
}

struct Evaluation {
    ll: f64,
    info: CrossProducts,
    mu_min: f64,
    mu_max: f64,
}

impl Objective {
    pub fn new(
        frame: &AnalysisFrame,
        columns: &[DesignColumn],
        link: Link,
        response: Field,
    ) -> Result<Self, GlmError> {
        if !response.is_boolean() {
            return Err(GlmError::InvalidDesign(format!("response `{response}` is not binary")));
        }
        let records: Vec<&ObservationRecord> = frame.records.iter().collect();
        let x = build_matrix(columns, &records);
        let y = records
            .iter()
            .map(|r| f64::from(u8::from(response.flag(r).unwrap())))
            .collect();
        Ok(Objective { x, y, link })
    }

    /// The objective a fitted treatment model maximized on `frame`.
    pub fn for_model(frame: &AnalysisFrame, model: &FittedPropensityModel) -> Self {
        Objective::new(frame, &model.columns, model.link, Field::Treatment).expect("treatment is binary")
    }

    pub fn dim(&self) -> usize {
        self.x.p
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        (0..self.x.n)
            .map(|i| eval_row(self.link, self.x.dot(i, beta), self.y[i]).ll)
            .sum()
    }

    /// Analytic gradient of the log-likelihood.
    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.evaluate(beta).info.xts
    }

    fn evaluate(&self, beta: &[f64]) -> Evaluation {
        let link = self.link;
        let mut info = accumulate(self.x.n, self.x.p, |i, acc| {
            let r = eval_row(link, self.x.dot(i, beta), self.y[i]);
            acc.add_row(self.x.row(i), r.weight, r.score);
            acc.scalar += r.ll;
        });
        // mu extremes tracked separately: cheap compared to the cross-products
        let (mut mu_min, mut mu_max) = (1.0f64, 0.0f64);
        for i in 0..self.x.n {
            let mu = eval_row(link, self.x.dot(i, beta), self.y[i]).mu;
            mu_min = mu_min.min(mu);
            mu_max = mu_max.max(mu);
        }
        let ll = std::mem::take(&mut info.scalar);
        Evaluation {
            ll,
            info,
            mu_min,
            mu_max,
        }
    }

    fn observed_information(&self, beta: &[f64]) -> CrossProducts {
        let link = self.link;
        accumulate(self.x.n, self.x.p, |i, acc| {
            let w = observed_weight(link, self.x.dot(i, beta), self.y[i]);
            acc.add_row(self.x.row(i), w, 0.0);
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Fits the treatment-assignment model `P(treatment = 1 | x)`.
pub fn fit(frame: &AnalysisFrame, spec: &DesignSpec, link: Link) -> Result<FittedPropensityModel, GlmError> {
    fit_response(frame, spec, link, Field::Treatment).map(|(m, _)| m)
}

/// Fits any binary field on the design; also returns the log-likelihood
/// after every accepted iteration (starting with the initial point).
pub fn fit_response(
    frame: &AnalysisFrame,
    spec: &DesignSpec,
    link: Link,
    response: Field,
) -> Result<(FittedPropensityModel, Vec<f64>), GlmError> {
    let records: Vec<&ObservationRecord> = frame.records.iter().collect();
    let columns = spec.columns(&records);
    let objective = Objective::new(frame, &columns, link, response)?;
    let n = objective.x.n;
    let p = objective.x.p;

    let successes: f64 = objective.y.iter().sum();
    let treated = successes as usize;
    if treated == 0 || treated == n {
        return Err(GlmError::DegenerateResponse {
            treated,
            control: n - treated,
        });
    }

    let gram = accumulate(n, p, |i, acc| acc.add_row(objective.x.row(i), 1.0, 0.0)).gram();
    if let Some(j) = first_dependent_column(&gram) {
        let name = if j == 0 { "Constant".to_string() } else { columns[j - 1].name() };
        return Err(GlmError::RankDeficient(name));
    }

    let mut beta = vec![0.0; p];
    let rate = successes / n as f64;
    beta[0] = match link {
        Link::Logit => (rate / (1.0 - rate)).ln(),
        Link::Probit => normal_quantile(rate),
    };

    let mut cur = objective.evaluate(&beta);
    let mut trace = vec![cur.ll];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=MAX_ITER {
        if max_abs(&cur.info.xts) < SCORE_TOL {
            converged = true;
            break;
        }
        // probit is globally concave, so Newton on the observed information
        // is safe and converges quadratically where Fisher scoring crawls
        let hessian = match link {
            Link::Logit => cur.info.gram(),
            Link::Probit => objective.observed_information(&beta).gram(),
        };
        let delta = solve_spd(&hessian, &cur.info.rhs()).ok_or(GlmError::Singular)?;
        // near the optimum the likelihood gain drops below summation noise;
        // a step is still taken if it shrinks the score
        let acceptable = |e: &Evaluation| {
            e.ll >= cur.ll
                || (cur.ll - e.ll <= LL_NOISE * cur.ll.abs() && max_abs(&e.info.xts) < max_abs(&cur.info.xts))
        };
        let mut step = 1.0;
        let mut halvings = 0;
        let (cand_beta, cand) = loop {
            let b: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let e = objective.evaluate(&b);
            if acceptable(&e) || halvings == MAX_HALVINGS {
                break (b, e);
            }
            step *= 0.5;
            halvings += 1;
        };
        if !acceptable(&cand) {
            // no ascent direction left at machine precision
            converged = true;
            break;
        }
        iterations = iter;
        if cand.mu_min <= SEPARATION_EPS || cand.mu_max >= 1.0 - SEPARATION_EPS {
            return Err(GlmError::Separation { iterations });
        }
        let rel = (cand.ll - cur.ll).abs() / cur.ll.abs().max(f64::MIN_POSITIVE);
        // on wide-ranged covariates a sizeable score barely moves the
        // likelihood, so a flat likelihood only ends the fit once the score
        // has stopped shrinking too
        let stalled = max_abs(&cand.info.xts) >= max_abs(&cur.info.xts);
        beta = cand_beta;
        cur = cand;
        trace.push(cur.ll);
        if rel < REL_LL_TOL && stalled {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GlmError::IterationLimit(MAX_ITER));
    }
    if cur.mu_min <= SEPARATION_EPS_FINAL || cur.mu_max >= 1.0 - SEPARATION_EPS_FINAL {
        return Err(GlmError::Separation { iterations });
    }

    let info = match link {
        Link::Logit => cur.info.gram(),
        Link::Probit => objective.observed_information(&beta).gram(),
    };
    let cov = inverse_spd(&info).ok_or(GlmError::Singular)?;
    let covariance: Vec<f64> = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();

    let model = FittedPropensityModel {
        link,
        spec: spec.clone(),
        columns,
        coefficients: beta,
        covariance,
        n_obs: n,
        iterations,
        converged,
        log_likelihood: cur.ll,
        max_abs_score: max_abs(&cur.info.xts),
    };
    Ok((model, trace))
}
