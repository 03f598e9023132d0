//! Rosenbaum bounds for matched binary outcomes through bounded
//! Mantel–Haenszel statistics.
//!
//! Under hidden bias of magnitude Γ the count of treated successes follows an
//! extended (Fisher noncentral) hypergeometric law with odds multiplier Γ for
//! the overestimation bound and 1/Γ for the underestimation bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::normal_sf;

#[derive(Debug, Error, PartialEq)]
pub enum SensitivityError {
    #[error("invalid gamma grid: {0}")]
    InvalidGrid(String),
    #[error("gamma must be a positive finite number, got {0}")]
    InvalidGamma(f64),
    #[error("inconsistent counts: N={n}, N1={n1}, Ys={ys}")]
    InvalidCounts { n: u64, n1: u64, ys: u64 },
    #[error("no admissible root for N={n}, N1={n1}, Ys={ys}, gamma={gamma}")]
    NoAdmissibleRoot { n: u64, n1: u64, ys: u64, gamma: f64 },
    #[error("expectation {0} sits on the support boundary; variance is undefined")]
    DegenerateVariance(f64),
    #[error("matched sample is empty")]
    EmptySample,
}

/// Values `start, start + step, …, stop`, with `start ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid {
            start: 1.0,
            stop: 2.0,
            step: 0.1,
        }
    }
}

impl GammaGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self, SensitivityError> {
        let g = GammaGrid { start, stop, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SensitivityError> {
        let bad = |m: &str| Err(SensitivityError::InvalidGrid(m.to_string()));
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) {
            return bad("values must be finite");
        }
        if self.start < 1.0 {
            return bad("start must be at least 1 (bounds for Γ < 1 mirror those for 1/Γ)");
        }
        if self.step <= 0.0 {
            return bad("step must be positive");
        }
        if self.stop < self.start {
            return bad("stop must not be below start");
        }
        if (self.stop - self.start) / self.step > 1e6 {
            return bad("more than a million grid points");
        }
        Ok(())
    }

    /// Grid points, each rounded to 10 decimals so `1.0 + 3 × 0.1` reads 1.3.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                format!("{v:.10}").parse().expect("formatted float")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub expectation: f64,
    pub variance: f64,
}

fn check_counts(n: u64, n1: u64, ys: u64, gamma: f64) -> Result<(u64, u64), SensitivityError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(SensitivityError::InvalidGamma(gamma));
    }
    if n1 > n || ys > n {
        return Err(SensitivityError::InvalidCounts { n, n1, ys });
    }
    Ok(((n1 + ys).saturating_sub(n), ys.min(n1)))
}

/// Exact mean and variance of the number of treated successes when
/// `P(k) ∝ C(N1, k) C(N − N1, Ys − k) Γ^k`.
pub fn extended_hypergeometric_moments(n: u64, n1: u64, ys: u64, gamma: f64) -> Result<Moments, SensitivityError> {
    let (lo, hi) = check_counts(n, n1, ys, gamma)?;
    if lo == hi {
        return Ok(Moments {
            expectation: lo as f64,
            variance: 0.0,
        });
    }
    // log-weights through the ratio w(k+1)/w(k)
    let n0 = (n - n1) as f64;
    let (n1f, ysf, lg) = (n1 as f64, ys as f64, gamma.ln());
    let len = (hi - lo) as usize + 1;
    let mut logw = Vec::with_capacity(len);
    let mut acc = 0.0f64;
    logw.push(0.0);
    for k in lo..hi {
        let k = k as f64;
        acc += ((n1f - k) * (ysf - k)).ln() - ((k + 1.0) * (n0 - ysf + k + 1.0)).ln() + lg;
        logw.push(acc);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean_off: f64 = w.iter().enumerate().map(|(i, wi)| i as f64 * wi).sum::<f64>() / total;
    let variance: f64 = w
        .iter()
        .enumerate()
        .map(|(i, wi)| {
            let d = i as f64 - mean_off;
            d * d * wi
        })
        .sum::<f64>()
        / total;
    Ok(Moments {
        expectation: lo as f64 + mean_off,
        variance,
    })
}

/// Large-sample approximation: the expectation is the admissible root of
/// `ỹ²(Γ−1) − ỹ[(Γ−1)(N1+Ys) + N] + Γ N1 Ys = 0` and the variance is
/// `(1/ỹ + 1/(Ys−ỹ) + 1/(N1−ỹ) + 1/(N−Ys−N1+ỹ))⁻¹`.
pub fn large_sample_moments(n: u64, n1: u64, ys: u64, gamma: f64) -> Result<Moments, SensitivityError> {
    let (lo, hi) = check_counts(n, n1, ys, gamma)?;
    let (nf, n1f, ysf) = (n as f64, n1 as f64, ys as f64);
    let a = gamma - 1.0;
    let b = -(a * (n1f + ysf) + nf);
    let c = gamma * n1f * ysf;
    let (lo, hi) = (lo as f64, hi as f64);
    let inside = |y: f64| y >= lo - 1e-9 && y <= hi + 1e-9;
    let root = if a == 0.0 {
        Some(n1f * ysf / nf)
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            None
        } else {
            // numerically stable pair of roots
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            [q / a, c / q].into_iter().filter(|y| y.is_finite()).find(|y| inside(*y))
        }
    };
    let y = root.ok_or(SensitivityError::NoAdmissibleRoot { n, n1, ys, gamma })?;
    let cells = [y, ysf - y, n1f - y, nf - ysf - n1f + y];
    if cells.iter().any(|c| *c <= 0.0) {
        return Err(SensitivityError::DegenerateVariance(y));
    }
    let variance = 1.0 / cells.iter().map(|c| 1.0 / c).sum::<f64>();
    Ok(Moments {
        expectation: y,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    #[default]
    Exact,
    LargeSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    /// The whole matched sample as one 2×2 table.
    #[default]
    Pooled,
    /// One stratum per matched pair.
    PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MhOptions {
    #[serde(default)]
    pub method: MomentMethod,
    #[serde(default)]
    pub stratification: Stratification,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhBoundRow {
    pub gamma: f64,
    /// Statistic under the overestimation bound (odds multiplier Γ).
    pub q_plus: f64,
    /// Statistic under the underestimation bound (odds multiplier 1/Γ).
    pub q_minus: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Set when the null variance is zero or undefined at this Γ.
    pub degenerate: bool,
}

/// Continuity-corrected standardized statistic; the 0.5 correction shrinks
/// the deviation toward zero.
fn statistic(y1: f64, m: Moments) -> Option<f64> {
    if !(m.variance > 0.0) {
        return None;
    }
    let d = y1 - m.expectation;
    let corrected = d.signum() * (d.abs() - 0.5).max(0.0);
    Some(corrected / m.variance.sqrt())
}

fn moments(method: MomentMethod, n: u64, n1: u64, ys: u64, gamma: f64) -> Result<Moments, SensitivityError> {
    match method {
        MomentMethod::Exact => extended_hypergeometric_moments(n, n1, ys, gamma),
        MomentMethod::LargeSample => large_sample_moments(n, n1, ys, gamma),
    }
}

/// Summed null moments over strata at odds multiplier `gamma`.
fn bound_moments(pairs: &[(bool, bool)], options: MhOptions, gamma: f64) -> Result<Moments, SensitivityError> {
    match options.stratification {
        Stratification::Pooled => {
            let m = pairs.len() as u64;
            let ys = pairs.iter().map(|(t, c)| u64::from(*t) + u64::from(*c)).sum();
            moments(options.method, 2 * m, m, ys, gamma)
        }
        Stratification::PerPair => {
            // concordant pairs have a fixed count and add nothing to the variance
            let discordant = pairs.iter().filter(|(t, c)| t != c).count() as f64;
            let concordant_success = pairs.iter().filter(|(t, c)| *t && *c).count() as f64;
            let one = moments(options.method, 2, 1, 1, gamma)?;
            Ok(Moments {
                expectation: concordant_success + discordant * one.expectation,
                variance: discordant * one.variance,
            })
        }
    }
}

/// One bound row per grid point; `pairs` holds (treated, control) outcomes.
pub fn mh_bounds(pairs: &[(bool, bool)], grid: &GammaGrid, options: MhOptions) -> Result<Vec<MhBoundRow>, SensitivityError> {
    if pairs.is_empty() {
        return Err(SensitivityError::EmptySample);
    }
    grid.validate()?;
    let y1 = pairs.iter().filter(|(t, _)| *t).count() as f64;
    grid.values()
        .into_par_iter()
        .map(|gamma| {
            let side = |g: f64| -> Result<Option<f64>, SensitivityError> {
                match bound_moments(pairs, options, g) {
                    Ok(m) => Ok(statistic(y1, m)),
                    Err(SensitivityError::DegenerateVariance(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            };
            let plus = side(gamma)?;
            let minus = side(1.0 / gamma)?;
            let q_plus = plus.unwrap_or(f64::NAN);
            let q_minus = minus.unwrap_or(f64::NAN);
            Ok(MhBoundRow {
                gamma,
                q_plus,
                q_minus,
                p_plus: normal_sf(q_plus.abs()),
                p_minus: normal_sf(q_minus.abs()),
                degenerate: plus.is_none() || minus.is_none(),
            })
        })
        .collect()
}

pub const MH_HEADER: &str = "gamma,q_plus,q_minus,p_plus,p_minus,abs_q_plus,abs_q_minus,degenerate";

fn cells(r: &MhBoundRow) -> String {
    format!(
        "{:.3},{:.3},{:.3},{:.4},{:.4},{:.3},{:.3},{}",
        r.gamma,
        r.q_plus,
        r.q_minus,
        r.p_plus,
        r.p_minus,
        r.q_plus.abs(),
        r.q_minus.abs(),
        r.degenerate
    )
}

pub fn render_mh_bounds(rows: &[MhBoundRow]) -> String {
    let mut out = format!("{MH_HEADER}\n");
    for r in rows {
        out.push_str(&cells(r));
        out.push('\n');
    }
    out
}

/// Pre and post bounds side by side, one line per Γ.
pub fn render_mh_two_wave(pre: &[MhBoundRow], post: &[MhBoundRow]) -> String {
    let mut out = String::from(
        "gamma,pre_q_plus,pre_q_minus,pre_p_plus,pre_p_minus,post_q_plus,post_q_minus,post_p_plus,post_p_minus\n",
    );
    for (a, b) in pre.iter().zip(post) {
        out.push_str(&format!(
            "{:.1},{:.3},{:.3},{:.4},{:.4},{:.3},{:.3},{:.4},{:.4}\n",
            a.gamma, a.q_plus, a.q_minus, a.p_plus, a.p_minus, b.q_plus, b.q_minus, b.p_plus, b.p_minus
        ));
    }
    out
}
