use std::collections::BTreeMap;

use progeval::pipeline::{analyze_wave, subgroup_sweep, Goal, PipelineConfig};
use progeval::synthgen::{Categorical, IntRange, SyntheticSpec};
use progeval::{AnalysisFrame, Field, Wave, Zone, ZoneMap};

fn range(r: IntRange) -> Vec<(f64, f64)> {
    let w = 1.0 / (r.max - r.min + 1) as f64;
    (r.min..=r.max).map(|v| (v as f64, w)).collect()
}

fn categorical(c: &Categorical) -> Vec<(f64, f64)> {
    let total: f64 = c.weights.iter().sum();
    c.values.iter().zip(&c.weights).map(|(v, w)| (*v as f64, w / total)).collect()
}

/// Marginal distribution of each covariate named in `coefficients`, paired
/// with its coefficient.
fn terms(spec: &SyntheticSpec, coefficients: &BTreeMap<String, f64>) -> Vec<(f64, Vec<(f64, f64)>)> {
    let c = &spec.covariates;
    coefficients
        .iter()
        .map(|(name, b)| {
            let dist = match name.parse::<Field>().unwrap() {
                Field::Age => range(c.age),
                Field::HhSize => range(c.hh_size),
                Field::Religion => categorical(&c.religion),
                Field::Caste => categorical(&c.caste),
                Field::Education => categorical(&c.education),
                Field::WealthIndex => categorical(&c.wealth_index),
                Field::UrbanRural => categorical(&c.urban_rural),
                Field::Gender => categorical(&c.gender),
                other => panic!("no marginal for {other}"),
            };
            (*b, dist)
        })
        .collect()
}

/// `E[logistic(index)]` by summing over the full product of covariate
/// supports and the hidden binary confounder.
fn analytic_treated_share(spec: &SyntheticSpec) -> f64 {
    let terms = terms(spec, &spec.selection.coefficients);
    fn walk(terms: &[(f64, Vec<(f64, f64)>)], index: f64, prob: f64, log_gamma: f64) -> f64 {
        match terms.split_first() {
            None => {
                let l = |z: f64| 1.0 / (1.0 + (-z).exp());
                prob * 0.5 * (l(index) + l(index + log_gamma))
            }
            Some(((b, dist), rest)) => dist
                .iter()
                .map(|(v, p)| walk(rest, index + b * v, prob * p, log_gamma))
                .sum(),
        }
    }
    walk(&terms, spec.selection.intercept, 1.0, spec.hidden_bias_gamma.ln())
}

fn analytic_baseline_outcome(spec: &SyntheticSpec) -> f64 {
    spec.outcome.intercept
        + terms(spec, &spec.outcome.coefficients)
            .iter()
            .map(|(b, dist)| b * dist.iter().map(|(v, p)| v * p).sum::<f64>())
            .sum::<f64>()
        + 0.5 * spec.hidden_outcome_effect
}

fn share(frame: &AnalysisFrame, f: impl Fn(&progeval::ObservationRecord) -> bool) -> f64 {
    frame.records.iter().filter(|r| f(r)).count() as f64 / frame.len() as f64
}

fn within_sigmas(observed: f64, p: f64, n: usize, k: f64) -> bool {
    (observed - p).abs() <= k * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn treated_share_matches_selection_model() {
    for gamma in [1.0, 2.0] {
        let mut spec = SyntheticSpec::benchmark();
        spec.n_per_wave = 200_000;
        spec.hidden_bias_gamma = gamma;
        let expected = analytic_treated_share(&spec);
        for wave in [Wave::Pre, Wave::Post] {
            let frame = spec.generate(wave).unwrap();
            let got = share(&frame, |r| r.treatment);
            assert!(within_sigmas(got, expected, spec.n_per_wave, 3.0), "Γ={gamma} {wave:?}: {got} vs {expected}");
        }
    }
}

#[test]
fn baseline_outcome_matches_linear_model() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 200_000;
    let frame = spec.generate(Wave::Pre).unwrap();
    let expected = analytic_baseline_outcome(&spec);
    let got = share(&frame, |r| r.lpg_access);
    assert!(within_sigmas(got, expected, spec.n_per_wave, 3.0), "{got} vs {expected}");

    // post wave adds the common shift plus the effect on the treated share
    let post = spec.generate(Wave::Post).unwrap();
    let p_treat = analytic_treated_share(&spec);
    let expected_post = expected + spec.outcome.post_shift + spec.true_att * p_treat;
    let got_post = share(&post, |r| r.lpg_access);
    assert!(within_sigmas(got_post, expected_post, spec.n_per_wave, 3.0), "{got_post} vs {expected_post}");
}

#[test]
fn null_effect_leaves_raw_did_at_zero() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 100_000;
    spec.true_att = 0.0;
    let gap = |f: &AnalysisFrame| {
        let arm = |t: bool| {
            let n = f.records.iter().filter(|r| r.treatment == t).count() as f64;
            f.records.iter().filter(|r| r.treatment == t && r.lpg_access).count() as f64 / n
        };
        arm(true) - arm(false)
    };
    let pre = spec.generate(Wave::Pre).unwrap();
    let post = spec.generate(Wave::Post).unwrap();
    let did = gap(&post) - gap(&pre);
    // each gap has SE below 0.0035 at this size
    assert!(did.abs() < 4.0 * 0.005, "{did}");
}

#[test]
fn generation_is_deterministic_per_seed_and_wave() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 2_000;
    let a = spec.generate(Wave::Pre).unwrap();
    let b = spec.generate(Wave::Pre).unwrap();
    assert_eq!(a.records, b.records);
    let post = spec.generate(Wave::Post).unwrap();
    assert_ne!(a.records[0].age, post.records[0].age);
    assert!(post.records.iter().all(|r| r.wave == Wave::Post));
    let other = spec.with_seed(spec.seed + 1).generate(Wave::Pre).unwrap();
    assert_ne!(a.records, other.records);
    assert!(a.records.iter().all(|r| r.validate().is_ok()));
}

#[test]
fn invalid_specs_are_rejected() {
    let base = SyntheticSpec::benchmark();
    let mut s = base.clone();
    s.hidden_bias_gamma = 0.5;
    assert!(s.validate().is_err());
    let mut s = base.clone();
    s.selection.coefficients.insert("no_such_field".into(), 1.0);
    assert!(s.validate().is_err());
    let mut s = base.clone();
    s.outcome.intercept = 0.9;
    assert!(s.validate().is_err());
    let mut s = base.clone();
    s.outcome.zone_effects.insert("Atlantis".into(), 0.01);
    assert!(s.validate().is_err());
    let mut s = base.clone();
    s.covariates.states = vec![999];
    assert!(s.validate().is_err());
    let mut s = base;
    s.n_per_wave = 0;
    assert!(s.validate().is_err());
    assert!(SyntheticSpec::from_toml("n_per_wave = 10\nbogus = 1").is_err());
}

#[test]
fn sweep_recovers_zone_effect_signs() {
    let zones = ZoneMap::default();
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 300_000;
    spec.true_att = 0.0;
    spec.covariates.states = [Zone::North, Zone::South].iter().flat_map(|z| zones.states_in(*z)).collect();
    spec.outcome.zone_effects = [("North".to_string(), 0.05), ("South".to_string(), -0.02)].into();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.toml");
    std::fs::write(&path, spec.to_toml()).unwrap();
    let config = PipelineConfig {
        synthetic: Some(path),
        ..PipelineConfig::default()
    };
    let report = subgroup_sweep(&config, Field::Zone).unwrap();
    assert!(report.skipped.is_empty(), "{:?}", report.skipped);
    assert_eq!(report.rows.len(), 2);
    let north = report.row("North").unwrap();
    let south = report.row("South").unwrap();
    assert!((north.did.effect - 0.05).abs() < 0.02, "{}", north.did.effect);
    assert!((south.did.effect + 0.02).abs() < 0.02, "{}", south.did.effect);
    assert!(north.difference > 0.0 && north.difference_p < 0.05);
    assert!(south.difference < 0.0 && south.difference_p < 0.05);
}

fn post_wave_bounds(spec: &SyntheticSpec) -> (f64, Vec<progeval::MhBoundRow>) {
    let settings = PipelineConfig::default().resolve().unwrap();
    let frame = spec.generate(Wave::Post).unwrap();
    let a = analyze_wave(frame, &settings, Goal::Full).unwrap();
    (a.att.unwrap().att, a.bounds)
}

#[test]
fn real_effect_is_significant_without_hidden_bias() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 60_000;
    spec.true_att = 0.05;
    let (_, bounds) = post_wave_bounds(&spec);
    assert_eq!(bounds[0].gamma, 1.0);
    assert!(bounds[0].p_plus < 0.01, "{:?}", bounds[0]);
}

#[test]
fn hidden_confounder_biases_matching_and_bounds_flag_it() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 100_000;
    spec.true_att = 0.0;
    spec.hidden_bias_gamma = 1.5;
    spec.hidden_outcome_effect = 0.15;
    spec.outcome.post_shift = 0.05;
    let (att, bounds) = post_wave_bounds(&spec);
    // treated units carry the confounder more often, so the naive ATT is positive
    assert!(att > 0.01, "{att}");
    let at = |g: f64| bounds.iter().find(|b| (b.gamma - g).abs() < 1e-9).unwrap();
    // significant at Γ = 1, explained away once Γ reaches the true odds multiplier
    assert!(at(1.0).q_plus > 1.96, "{:?}", at(1.0));
    assert!(at(1.5).q_plus < 1.96, "{:?}", at(1.5));
}

#[test]
fn strong_effect_survives_the_whole_default_grid() {
    let mut spec = SyntheticSpec::benchmark();
    spec.n_per_wave = 60_000;
    spec.true_att = 0.25;
    spec.outcome.post_shift = 0.0;
    let (_, bounds) = post_wave_bounds(&spec);
    assert_eq!(bounds.len(), 11);
    for b in &bounds {
        assert!(b.q_plus > 0.0 && b.p_plus < 0.01, "{b:?}");
    }
}
