mod common;

use common::record;
use progeval::effects::{
    aipw, aipw_with_scores, att_matched, decimal_difference, did_of_att, fit_outcome_models, ipw, ipw_with_scores,
    regression_imputation, EffectError, Trim,
};
use progeval::glm::{fit, CategoricalPolicy};
use progeval::psmatch::{MatchedPair, MatchedSample};
use progeval::{AnalysisFrame, DesignSpec, Estimand, Field, Link, ObservationRecord};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(pairs: &[(usize, usize)]) -> MatchedSample {
    MatchedSample {
        pairs: pairs
            .iter()
            .map(|&(treated, control)| MatchedPair { treated, control, distance: 0.0 })
            .collect(),
        n_on_support_treated: pairs.len(),
        n_on_support_untreated: pairs.len(),
        unmatched_treated: Vec::new(),
    }
}

#[test]
fn matched_att_hand_values() {
    // outcomes: treated 1,1,0,1 ; controls 0,1,0,0 → diffs 1,0,0,1
    let y = [true, true, false, true, false, true, false, false];
    let s = sample(&[(0, 4), (1, 5), (2, 6), (3, 7)]);
    let est = att_matched(&s, |id| y.get(id).copied()).unwrap();
    assert_eq!(est.att, 0.5);
    assert_eq!(est.treated_mean, 0.75);
    assert_eq!(est.control_mean, 0.25);
    // sample variance of (1,0,0,1) is 1/3
    assert!((est.se - (1.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    assert_eq!(est.n_treated, 4);
    assert_eq!(att_matched(&sample(&[]), |_| Some(true)), Err(EffectError::EmptySample));
    assert_eq!(
        att_matched(&sample(&[(0, 9)]), |id| y.get(id).copied()),
        Err(EffectError::MissingOutcome(9))
    );
}

#[test]
fn did_of_reported_atts_is_decimal_exact() {
    assert_eq!(decimal_difference(0.007, 0.029), -0.022);
    assert_eq!(decimal_difference(0.3, 0.1), 0.2);
    assert_eq!(decimal_difference(1e-300, 1e300), 1e-300 - 1e300);

    let y = [true, false];
    let mut pre = att_matched(&sample(&[(0, 1)]), |id| y.get(id).copied()).unwrap();
    let mut post = pre.clone();
    pre.att = 0.029;
    pre.se = 0.003;
    post.att = 0.007;
    post.se = 0.004;
    let d = did_of_att(&pre, &post);
    assert_eq!(d.effect, -0.022);
    assert!((d.se - 0.005).abs() < 1e-15);
    assert!((d.t_stat - -4.4).abs() < 1e-12);
}

/// Binary wealth-driven confounding with a constant additive effect of `tau`.
fn confounded(n: usize, tau: f64, seed: u64) -> AnalysisFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let recs = (0..n)
        .map(|i| {
            let mut r = record(i);
            r.wealth_index = 1 + (u() * 5.0) as u8;
            let z = 1.0 - 0.6 * r.wealth_index as f64;
            r.treatment = u() < 1.0 / (1.0 + (-z).exp());
            let p = 0.1 + 0.12 * r.wealth_index as f64 + if r.treatment { tau } else { 0.0 };
            r.lpg_access = u() < p;
            r
        })
        .collect();
    AnalysisFrame::from_records(recs, "confounded")
}

fn wealth_only() -> DesignSpec {
    DesignSpec::new(vec![Field::WealthIndex], CategoricalPolicy::Indicators).unwrap()
}

fn raw_difference(frame: &AnalysisFrame) -> f64 {
    let arm = |t: bool| {
        let ys: Vec<f64> = frame
            .records
            .iter()
            .filter(|r| r.treatment == t)
            .map(|r| f64::from(u8::from(r.lpg_access)))
            .collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    arm(true) - arm(false)
}

#[test]
fn constant_scores_give_the_raw_difference() {
    let frame = confounded(4_000, 0.05, 1);
    let flat = vec![0.4; frame.len()];
    for estimand in [Estimand::Ate, Estimand::Atet] {
        let est = ipw_with_scores(&frame, &flat, Field::LpgAccess, estimand, Trim::default()).unwrap();
        assert!((est.value - raw_difference(&frame)).abs() < 1e-12);
        assert_eq!(est.n, frame.len());
        assert_eq!(est.n_trimmed, 0);
    }
}

/// Reference ATET from the weighted-mean definition written out directly.
fn atet_reference(records: &[ObservationRecord], e: &[f64]) -> f64 {
    let (mut t1, mut n1, mut t0, mut s0) = (0.0, 0.0, 0.0, 0.0);
    for (r, &p) in records.iter().zip(e) {
        let y = if r.lpg_access { 1.0 } else { 0.0 };
        if r.treatment {
            t1 += y;
            n1 += 1.0;
        } else {
            t0 += y * p / (1.0 - p);
            s0 += p / (1.0 - p);
        }
    }
    t1 / n1 - t0 / s0
}

#[test]
fn ipw_atet_matches_weighted_mean_definition() {
    let frame = confounded(3_000, 0.0, 2);
    let model = fit(&frame, &wealth_only(), Link::Logit).unwrap();
    let scores = model.score_frame(&frame);
    let est = ipw(&frame, &model, Field::LpgAccess, Estimand::Atet, Trim { lower: 0.0, upper: 1.0 }).unwrap();
    assert!((est.value - atet_reference(&frame.records, &scores)).abs() < 1e-12);
}

#[test]
fn trimming_drops_extreme_scores() {
    let frame = confounded(1_000, 0.0, 3);
    let scores: Vec<f64> = (0..frame.len()).map(|i| if i % 10 == 0 { 0.995 } else { 0.5 }).collect();
    let est = ipw_with_scores(&frame, &scores, Field::LpgAccess, Estimand::Atet, Trim::default()).unwrap();
    assert_eq!(est.n_trimmed, 100);
    assert_eq!(est.n, 900);
    let all_out = vec![0.001; frame.len()];
    assert!(matches!(
        ipw_with_scores(&frame, &all_out, Field::LpgAccess, Estimand::Atet, Trim::default()),
        Err(EffectError::EmptyArm { .. })
    ));
    assert!(matches!(
        ipw_with_scores(&frame, &scores, Field::LpgAccess, Estimand::Atet, Trim { lower: 0.5, upper: 0.4 }),
        Err(EffectError::InvalidTrim)
    ));
    assert!(matches!(
        ipw_with_scores(&frame, &scores[1..], Field::LpgAccess, Estimand::Atet, Trim::default()),
        Err(EffectError::LengthMismatch { .. })
    ));
}

#[test]
fn aipw_equals_regression_with_saturated_outcome_and_flat_scores() {
    // with indicator columns the control fit reproduces cell means, so the
    // weighted control residuals vanish under any constant weight
    let frame = confounded(5_000, 0.05, 4);
    let models = fit_outcome_models(&frame, &wealth_only(), Field::LpgAccess).unwrap();
    let flat = vec![0.3; frame.len()];
    let a = aipw_with_scores(&frame, &flat, &models, Field::LpgAccess, Estimand::Atet, Trim::default()).unwrap();
    let r = regression_imputation(&frame, &models, Estimand::Atet).unwrap();
    assert!((a.value - r.value).abs() < 1e-10, "{} vs {}", a.value, r.value);
}

#[test]
fn double_robustness() {
    let tau = 0.05;
    let frame = confounded(60_000, tau, 5);
    let spec = wealth_only();
    let models = fit_outcome_models(&frame, &spec, Field::LpgAccess).unwrap();
    let model = fit(&frame, &spec, Link::Logit).unwrap();
    let flat = vec![0.3; frame.len()];
    let trim = Trim::default();

    let naive = raw_difference(&frame);
    assert!((naive - tau).abs() > 0.1, "confounding too weak: {naive}");
    // wrong propensity, right outcome model
    let a = aipw_with_scores(&frame, &flat, &models, Field::LpgAccess, Estimand::Atet, trim).unwrap();
    assert!((a.value - tau).abs() < 0.02, "{}", a.value);
    // right propensity
    let w = ipw(&frame, &model, Field::LpgAccess, Estimand::Atet, trim).unwrap();
    assert!((w.value - tau).abs() < 0.02, "{}", w.value);
    let b = aipw(&frame, &model, &models, Field::LpgAccess, Estimand::Atet, trim).unwrap();
    assert!((b.value - tau).abs() < 0.02, "{}", b.value);
    for est in [&a, &w, &b] {
        assert!(est.robust_se > 0.0 && est.robust_se < 0.02);
    }
    let ate = aipw(&frame, &model, &models, Field::LpgAccess, Estimand::Ate, trim).unwrap();
    assert!((ate.value - tau).abs() < 0.02, "{}", ate.value);
}

#[test]
fn treatment_is_not_an_outcome() {
    let frame = confounded(200, 0.0, 6);
    let flat = vec![0.5; frame.len()];
    assert!(matches!(
        ipw_with_scores(&frame, &flat, Field::Treatment, Estimand::Atet, Trim::default()),
        Err(EffectError::NotAnOutcome(_))
    ));
}
