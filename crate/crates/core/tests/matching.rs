mod common;

use common::{brute_force_greedy, record};
use progeval::glm::{fit, CategoricalPolicy};
use progeval::psmatch::{balance_report, common_support, nn_match, standardized_bias, MatchOptions, MatchedSample, Scored};
use progeval::{AnalysisFrame, DesignSpec, Field, Link};
use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn as_triples(m: &MatchedSample) -> Vec<(usize, usize, f64)> {
    m.pairs.iter().map(|p| (p.treated, p.control, p.distance)).collect()
}

/// Scores on a coarse grid so that score and distance ties are common.
fn instance(rng: &mut ChaCha8Rng) -> (Vec<Scored>, Vec<Scored>) {
    let nt = 1 + (rng.next_u32() % 10) as usize;
    let nc = 1 + (rng.next_u32() % 10) as usize;
    let coarse = rng.next_u32() % 2 == 0;
    let score = |rng: &mut ChaCha8Rng| {
        if coarse {
            (rng.next_u32() % 21) as f64 * 0.05
        } else {
            (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        }
    };
    let treated = (0..nt).map(|i| Scored::new(i, score(rng))).collect();
    let controls = (0..nc).map(|i| Scored::new(100 + i, score(rng))).collect();
    (treated, controls)
}

#[test]
fn greedy_matches_exhaustive_rule_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..1_000 {
        let (t, c) = instance(&mut rng);
        let caliper = (k % 4 == 0).then_some(0.1);
        let got = nn_match(&t, &c, MatchOptions { caliper }).unwrap();
        let (pairs, unmatched) = brute_force_greedy(&t, &c, caliper);
        assert_eq!(as_triples(&got), pairs, "instance {k}: {t:?} {c:?}");
        let mut u = got.unmatched_treated.clone();
        let mut e = unmatched.clone();
        u.sort_unstable();
        e.sort_unstable();
        assert_eq!(u, e, "instance {k}");
    }
}

proptest! {
    #[test]
    fn pairs_are_disjoint_and_sized(
        ts in prop::collection::vec(0.0f64..1.0, 1..40),
        cs in prop::collection::vec(0.0f64..1.0, 1..40),
    ) {
        let t: Vec<Scored> = ts.iter().enumerate().map(|(i, s)| Scored::new(i, *s)).collect();
        let c: Vec<Scored> = cs.iter().enumerate().map(|(i, s)| Scored::new(1000 + i, *s)).collect();
        let m = nn_match(&t, &c, MatchOptions::default()).unwrap();
        prop_assert_eq!(m.len(), t.len().min(c.len()));
        prop_assert_eq!(m.len() + m.unmatched_treated.len(), t.len());
        let mut used: Vec<usize> = m.pairs.iter().map(|p| p.control).collect();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), m.len());
        for p in &m.pairs {
            let d = (ts[p.treated] - cs[p.control - 1000]).abs();
            prop_assert_eq!(p.distance, d);
        }
    }

    #[test]
    fn permuting_inputs_does_not_change_pairs(
        ts in prop::collection::vec(0.0f64..1.0, 1..25),
        cs in prop::collection::vec(0.0f64..1.0, 1..25),
        seed in any::<u64>(),
    ) {
        let t: Vec<Scored> = ts.iter().enumerate().map(|(i, s)| Scored::new(i, *s)).collect();
        let c: Vec<Scored> = cs.iter().enumerate().map(|(i, s)| Scored::new(1000 + i, *s)).collect();
        let base = nn_match(&t, &c, MatchOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled_t = t.clone();
        let mut shuffled_c = c.clone();
        for v in [&mut shuffled_t, &mut shuffled_c] {
            for i in (1..v.len()).rev() {
                v.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
            }
        }
        let other = nn_match(&shuffled_t, &shuffled_c, MatchOptions::default()).unwrap();
        prop_assert_eq!(as_triples(&base), as_triples(&other));
    }

    #[test]
    fn support_bounds_are_the_overlap(
        ts in prop::collection::vec(0.0f64..1.0, 1..30),
        cs in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let t: Vec<Scored> = ts.iter().enumerate().map(|(i, s)| Scored::new(i, *s)).collect();
        let c: Vec<Scored> = cs.iter().enumerate().map(|(i, s)| Scored::new(i, *s)).collect();
        let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min).max(cs.iter().cloned().fold(f64::INFINITY, f64::min));
        let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        match common_support(&t, &c) {
            Ok(r) => {
                prop_assert!(lo <= hi);
                prop_assert_eq!((r.lower, r.upper), (lo, hi));
                let inside = r.retain(&t).len() + r.off_support_treated.len();
                prop_assert_eq!(inside, t.len());
                prop_assert!(r.retain(&c).iter().all(|u| u.score >= lo && u.score <= hi));
            }
            Err(_) => prop_assert!(lo > hi),
        }
    }
}

#[test]
fn large_instance_matches_quadratic_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut u = || (rng.next_u32() % 500) as f64 / 500.0;
    let t: Vec<Scored> = (0..300).map(|i| Scored::new(i, u())).collect();
    let c: Vec<Scored> = (0..700).map(|i| Scored::new(i, u())).collect();
    let got = nn_match(&t, &c, MatchOptions::default()).unwrap();
    let (pairs, unmatched) = brute_force_greedy(&t, &c, None);
    assert_eq!(as_triples(&got), pairs);
    assert!(unmatched.is_empty() && got.unmatched_treated.is_empty());
}

#[test]
fn standardized_bias_hand_value() {
    // means 2 and 1; variances 1 and 1 → 100 · 1 / 1
    let b = standardized_bias(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
    assert!((b - 100.0).abs() < 1e-12);
    assert!(standardized_bias(&[1.0, 1.0], &[1.0, 1.0]).is_none());
}

#[test]
fn matching_on_a_confounder_restores_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let recs: Vec<_> = (0..6_000)
        .map(|i| {
            let mut r = record(i);
            r.wealth_index = 1 + (u() * 5.0) as u8;
            r.age = 20 + (u() * 50.0) as u16;
            let z = -0.2 - 0.6 * r.wealth_index as f64 + 0.01 * r.age as f64;
            r.treatment = u() < 1.0 / (1.0 + (-z).exp());
            r
        })
        .collect();
    let frame = AnalysisFrame::from_records(recs, "conf");
    let spec = DesignSpec::new(vec![Field::WealthIndex, Field::Age], CategoricalPolicy::RawCodes).unwrap();
    let model = fit(&frame, &spec, Link::Logit).unwrap();
    let scores = model.score_frame(&frame);
    let (mut t, mut c) = (Vec::new(), Vec::new());
    for (i, (r, s)) in frame.records.iter().zip(&scores).enumerate() {
        if r.treatment { &mut t } else { &mut c }.push(Scored::new(i, *s));
    }
    let region = common_support(&t, &c).unwrap();
    let m = nn_match(&region.retain(&t), &region.retain(&c), MatchOptions::default()).unwrap();
    let (all_t, all_c): (Vec<_>, Vec<_>) = frame.records.iter().partition(|r| r.treatment);
    let before = balance_report(&all_t, &all_c, &model).unwrap();
    let mt: Vec<_> = m.pairs.iter().map(|p| &frame.records[p.treated]).collect();
    let mc: Vec<_> = m.pairs.iter().map(|p| &frame.records[p.control]).collect();
    let after = balance_report(&mt, &mc, &model).unwrap();
    assert!(before.max_abs_bias() > 20.0, "{}", before.max_abs_bias());
    assert!(after.max_abs_bias() < 5.0, "{}", after.max_abs_bias());
    assert!(after.rubin_r_ok());
    assert!(after.rubin_b.unwrap() < before.rubin_b.unwrap());
}
