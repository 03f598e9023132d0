use super::MatchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRow {
    pub bin_center: f64,
    pub density: f64,
}

/// Histogram density of scores over `n_bins` equal-width bins on `[0, 1]`,
/// normalized so that `Σ density · width = 1`. A score of exactly 1 falls in
/// the last bin.
pub fn density_profile(scores: &[f64], n_bins: usize) -> Result<Vec<DensityRow>, MatchError> {
    if n_bins < 2 {
        return Err(MatchError::TooFewBins(n_bins));
    }
    if scores.is_empty() {
        return Err(MatchError::EmptySample);
    }
    let width = 1.0 / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(MatchError::ScoreOutOfRange(s));
        }
        let bin = ((s * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let n = scores.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| DensityRow {
            bin_center: (i as f64 + 0.5) * width,
            density: c as f64 / (n * width),
        })
        .collect())
}

/// Largest bin-wise absolute difference between two profiles on the same bins.
pub fn max_density_gap(a: &[DensityRow], b: &[DensityRow]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.density - y.density).abs())
        .fold(0.0, f64::max)
}

/// The four treated/control × before/after-matching profiles, labelled.
pub fn density_quadrants(
    treated_before: &[f64],
    control_before: &[f64],
    treated_after: &[f64],
    control_after: &[f64],
    n_bins: usize,
) -> Result<Vec<(&'static str, Vec<DensityRow>)>, MatchError> {
    Ok(vec![
        ("treated_before", density_profile(treated_before, n_bins)?),
        ("control_before", density_profile(control_before, n_bins)?),
        ("treated_after", density_profile(treated_after, n_bins)?),
        ("control_after", density_profile(control_after, n_bins)?),
    ])
}

pub fn render_density(quadrants: &[(&str, Vec<DensityRow>)]) -> String {
    let mut out = String::from("quadrant,bin_center,density\n");
    for (name, rows) in quadrants {
        for r in rows {
            out.push_str(&format!("{name},{:.6},{:.6}\n", r.bin_center, r.density));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_equal_densities() {
        let s: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0 - 0.0625).collect();
        let d = density_profile(&s, 4).unwrap();
        assert!(d.iter().all(|r| (r.density - 1.0).abs() < 1e-12));
    }

    #[test]
    fn point_mass() {
        let d = density_profile(&[0.33, 0.31, 0.34], 10).unwrap();
        let nonzero: Vec<_> = d.iter().filter(|r| r.density > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].density - 10.0).abs() < 1e-12);
        assert!((nonzero[0].bin_center - 0.35).abs() < 1e-12);
    }

    #[test]
    fn integrates_to_one() {
        let s = [0.01, 0.2, 0.5, 0.51, 0.99, 1.0, 0.0];
        let d = density_profile(&s, 7).unwrap();
        let total: f64 = d.iter().map(|r| r.density / 7.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(density_profile(&[], 4), Err(MatchError::EmptySample));
        assert_eq!(density_profile(&[0.5], 1), Err(MatchError::TooFewBins(1)));
        assert_eq!(density_profile(&[1.5], 4), Err(MatchError::ScoreOutOfRange(1.5)));
    }
}
