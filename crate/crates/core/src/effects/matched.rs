use super::{EffectError, EstimateRow};
use crate::psmatch::{MatchedSample, UnitId};
use crate::stats::{mean, sample_variance, two_sided_p};

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    /// Mean of treated-minus-control outcome differences over pairs.
    pub att: f64,
    pub treated_mean: f64,
    pub control_mean: f64,
    /// `sqrt(var(differences) / n_pairs)`; NaN for a single pair.
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

impl AttEstimate {
    pub fn row(&self, sample: &str) -> EstimateRow {
        EstimateRow {
            estimator: "PSM".into(),
            estimand: "ATT".into(),
            sample: sample.into(),
            value: self.att,
            se: self.se,
            n: self.n_treated,
        }
    }
}

/// ATT over matched pairs; `outcome` looks up the binary outcome of a unit.
pub fn att_matched(
    sample: &MatchedSample,
    outcome: impl Fn(UnitId) -> Option<bool>,
) -> Result<AttEstimate, EffectError> {
    if sample.is_empty() {
        return Err(EffectError::EmptySample);
    }
    let y = |id: UnitId| -> Result<f64, EffectError> {
        outcome(id)
            .map(|b| f64::from(u8::from(b)))
            .ok_or(EffectError::MissingOutcome(id))
    };
    let mut yt = Vec::with_capacity(sample.len());
    let mut yc = Vec::with_capacity(sample.len());
    for p in &sample.pairs {
        yt.push(y(p.treated)?);
        yc.push(y(p.control)?);
    }
    let diffs: Vec<f64> = yt.iter().zip(&yc).map(|(t, c)| t - c).collect();
    let n = diffs.len();
    let att = mean(&diffs).expect("non-empty");
    let se = sample_variance(&diffs).map_or(f64::NAN, |v| (v / n as f64).sqrt());
    let t_stat = att / se;
    Ok(AttEstimate {
        att,
        treated_mean: mean(&yt).expect("non-empty"),
        control_mean: mean(&yc).expect("non-empty"),
        se,
        t_stat,
        p_value: two_sided_p(t_stat),
        n_treated: n,
        n_control: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DidEstimate {
    /// `post.att − pre.att`.
    pub effect: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub pre: AttEstimate,
    pub post: AttEstimate,
}

impl DidEstimate {
    pub fn row(&self, estimator: &str) -> EstimateRow {
        EstimateRow {
            estimator: estimator.into(),
            estimand: "ATT".into(),
            sample: "did".into(),
            value: self.effect,
            se: self.se,
            n: self.pre.n_treated + self.post.n_treated,
        }
    }
}

fn decimal_parts(x: f64) -> Option<(i128, i32)> {
    // shortest round-trip representation, e.g. "-2.9e-2"
    let s = format!("{x:e}");
    let (mant, exp) = s.split_once('e')?;
    let mut exp: i32 = exp.parse().ok()?;
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    exp -= frac.len() as i32;
    let digits: i128 = format!("{int}{frac}").parse().ok()?;
    Some((digits, exp))
}

fn scale(m: i128, by: i32) -> Option<i128> {
    10i128.checked_pow(u32::try_from(by).ok()?)?.checked_mul(m)
}

/// `a − b` computed on the shortest decimal forms of the two values and
/// rounded once, so `0.007 − 0.029` gives `-0.022` rather than
/// `-0.022000000000000002`. Falls back to binary subtraction when the
/// exponents are too far apart for exact alignment.
pub fn decimal_difference(a: f64, b: f64) -> f64 {
    if !(a.is_finite() && b.is_finite()) {
        return a - b;
    }
    let exact = || -> Option<f64> {
        let (ma, ea) = decimal_parts(a)?;
        let (mb, eb) = decimal_parts(b)?;
        let e = ea.min(eb);
        let d = scale(ma, ea - e)?.checked_sub(scale(mb, eb - e)?)?;
        format!("{d}e{e}").parse().ok()
    };
    exact().unwrap_or(a - b)
}

/// Difference between the post- and pre-period ATTs of two independent
/// cross-sections.
pub fn did_of_att(pre: &AttEstimate, post: &AttEstimate) -> DidEstimate {
    let effect = decimal_difference(post.att, pre.att);
    let se = (pre.se * pre.se + post.se * post.se).sqrt();
    let t_stat = effect / se;
    DidEstimate {
        effect,
        se,
        t_stat,
        p_value: two_sided_p(t_stat),
        pre: pre.clone(),
        post: post.clone(),
    }
}
