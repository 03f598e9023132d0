use super::{check_finite, MatchError, Scored, UnitId};

/// Score interval where both groups are observed (min-max rule).
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRegion {
    pub lower: f64,
    pub upper: f64,
    pub off_support_treated: Vec<UnitId>,
    pub off_support_control: Vec<UnitId>,
}

impl SupportRegion {
    pub fn contains(&self, score: f64) -> bool {
        score >= self.lower && score <= self.upper
    }

    /// Units whose score lies inside the region, order preserved.
    pub fn retain(&self, units: &[Scored]) -> Vec<Scored> {
        units.iter().copied().filter(|u| self.contains(u.score)).collect()
    }
}

fn range(units: &[Scored]) -> (f64, f64) {
    units
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u.score), hi.max(u.score)))
}

/// `lower = max(min T, min C)`, `upper = min(max T, max C)`; units outside
/// are off support.
pub fn common_support(treated: &[Scored], controls: &[Scored]) -> Result<SupportRegion, MatchError> {
    if treated.is_empty() {
        return Err(MatchError::EmptyInput("treated"));
    }
    if controls.is_empty() {
        return Err(MatchError::EmptyInput("control"));
    }
    check_finite(treated)?;
    check_finite(controls)?;
    let (t_lo, t_hi) = range(treated);
    let (c_lo, c_hi) = range(controls);
    let lower = t_lo.max(c_lo);
    let upper = t_hi.min(c_hi);
    if lower > upper {
        return Err(MatchError::EmptySupport { t_lo, t_hi, c_lo, c_hi });
    }
    let outside = |units: &[Scored]| -> Vec<UnitId> {
        units
            .iter()
            .filter(|u| u.score < lower || u.score > upper)
            .map(|u| u.id)
            .collect()
    };
    Ok(SupportRegion {
        lower,
        upper,
        off_support_treated: outside(treated),
        off_support_control: outside(controls),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(scores: &[f64]) -> Vec<Scored> {
        scores.iter().enumerate().map(|(i, s)| Scored::new(i, *s)).collect()
    }

    #[test]
    fn min_max_rule() {
        let t = units(&[0.2, 0.4]);
        let c = units(&[0.1, 0.5]);
        let r = common_support(&t, &c).unwrap();
        assert_eq!((r.lower, r.upper), (0.2, 0.4));
        assert!(r.off_support_treated.is_empty());
        assert_eq!(r.off_support_control, vec![0, 1]);
        assert!(r.retain(&c).is_empty());
    }

    #[test]
    fn identical_ranges() {
        let t = units(&[0.1, 0.3, 0.9]);
        let c = units(&[0.9, 0.5, 0.1]);
        let r = common_support(&t, &c).unwrap();
        assert!(r.off_support_treated.is_empty() && r.off_support_control.is_empty());
    }

    #[test]
    fn disjoint_ranges() {
        let t = units(&[0.7, 0.8]);
        let c = units(&[0.1, 0.2]);
        assert!(matches!(common_support(&t, &c), Err(MatchError::EmptySupport { .. })));
        assert!(matches!(common_support(&[], &c), Err(MatchError::EmptyInput("treated"))));
    }
}
