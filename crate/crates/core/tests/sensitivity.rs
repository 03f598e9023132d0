mod common;

use common::enumerated_moments;
use progeval::sensitivity::{
    extended_hypergeometric_moments, large_sample_moments, mh_bounds, MhOptions, MomentMethod, Stratification,
};
use progeval::GammaGrid;
use proptest::prelude::*;

#[test]
fn exact_moments_match_enumeration_up_to_thirty() {
    let mut checked = 0;
    for n in 1..=30u64 {
        for n1 in 0..=n {
            for ys in 0..=n {
                for gamma in [1.0, 1.1, 1.5, 2.0, 3.7, 10.0] {
                    let m = extended_hypergeometric_moments(n, n1, ys, gamma).unwrap();
                    let (mean, var) = enumerated_moments(n, n1, ys, gamma);
                    assert!((m.expectation - mean).abs() < 1e-9, "n={n} n1={n1} ys={ys} Γ={gamma}");
                    assert!((m.variance - var).abs() < 1e-9, "n={n} n1={n1} ys={ys} Γ={gamma}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 30_000);
}

#[test]
fn central_hypergeometric_closed_form() {
    // Γ = 1: E = n1·ys/n, Var = n1·ys·(n−n1)(n−ys) / (n²(n−1))
    for (n, n1, ys) in [(6u64, 3u64, 3u64), (40, 10, 25), (1000, 400, 300)] {
        let m = extended_hypergeometric_moments(n, n1, ys, 1.0).unwrap();
        let (nf, n1f, ysf) = (n as f64, n1 as f64, ys as f64);
        let e = n1f * ysf / nf;
        let v = n1f * ysf * (nf - n1f) * (nf - ysf) / (nf * nf * (nf - 1.0));
        assert!((m.expectation - e).abs() < 1e-12 * e.max(1.0), "{} vs {e}", m.expectation);
        assert!((m.variance - v).abs() < 1e-12 * v.max(1.0), "{} vs {v}", m.variance);
    }
}

#[test]
fn large_sample_moments_approach_exact() {
    for gamma in [1.0, 1.5, 2.0] {
        let exact = extended_hypergeometric_moments(4000, 2000, 1500, gamma).unwrap();
        let approx = large_sample_moments(4000, 2000, 1500, gamma).unwrap();
        assert!((exact.expectation - approx.expectation).abs() / exact.expectation < 1e-3);
        assert!((exact.variance - approx.variance).abs() / exact.variance < 1e-2);
    }
}

#[test]
fn hand_instance() {
    // 3 pairs, every treated outcome 1, every control 0: N=6, N1=3, Ys=3, Y1=3
    let pairs = vec![(true, false); 3];
    let grid = GammaGrid::new(1.0, 1.0, 0.1).unwrap();
    let rows = mh_bounds(&pairs, &grid, MhOptions::default()).unwrap();
    // (|3 − 1.5| − 0.5) / √0.45
    let q = 1.0 / 0.45f64.sqrt();
    assert!((rows[0].q_plus - q).abs() < 1e-9);
    assert!((rows[0].q_plus - 1.4907).abs() < 1e-3);
}

fn pairs_strategy() -> impl Strategy<Value = Vec<(bool, bool)>> {
    prop::collection::vec((any::<bool>(), any::<bool>()), 4..200)
}

proptest! {
    #[test]
    fn gamma_one_bounds_coincide(pairs in pairs_strategy(), per_pair in any::<bool>(), large in any::<bool>()) {
        let options = MhOptions {
            method: if large { MomentMethod::LargeSample } else { MomentMethod::Exact },
            stratification: if per_pair { Stratification::PerPair } else { Stratification::Pooled },
        };
        let grid = GammaGrid::default();
        if let Ok(rows) = mh_bounds(&pairs, &grid, options) {
            let first = &rows[0];
            prop_assert_eq!(first.gamma, 1.0);
            prop_assert_eq!(first.q_plus, first.q_minus);
            prop_assert_eq!(first.p_plus, first.p_minus);
        }
    }

    #[test]
    fn bounds_move_apart_as_gamma_grows(pairs in pairs_strategy(), per_pair in any::<bool>()) {
        let options = MhOptions {
            method: MomentMethod::Exact,
            stratification: if per_pair { Stratification::PerPair } else { Stratification::Pooled },
        };
        let grid = GammaGrid::new(1.0, 3.0, 0.25).unwrap();
        if let Ok(rows) = mh_bounds(&pairs, &grid, options) {
            for w in rows.windows(2) {
                if w[0].degenerate || w[1].degenerate {
                    continue;
                }
                prop_assert!(w[1].q_plus <= w[0].q_plus + 1e-12);
                prop_assert!(w[1].q_minus >= w[0].q_minus - 1e-12);
                prop_assert!(w[1].q_plus <= w[1].q_minus + 1e-12);
            }
            for r in &rows {
                prop_assert!((0.0..=0.5).contains(&r.p_plus) && (0.0..=0.5).contains(&r.p_minus));
            }
        }
    }
}

#[test]
fn grid_values_are_inclusive_and_rounded() {
    let g = GammaGrid::default();
    let v = g.values();
    let rows = mh_bounds(&[(true, false), (false, false), (true, true)], &g, MhOptions::default()).unwrap();
    assert_eq!(rows.iter().map(|r| r.gamma).collect::<Vec<_>>(), v);
    assert_eq!(v.len(), 11);
    assert_eq!(v[3], 1.3);
    assert_eq!(*v.last().unwrap(), 2.0);
    assert!(GammaGrid::new(0.9, 2.0, 0.1).is_err());
    assert!(GammaGrid::new(2.0, 1.0, 0.1).is_err());
    assert!(GammaGrid::new(1.0, 2.0, 0.0).is_err());
}
