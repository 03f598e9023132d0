//! Synthetic two-wave survey populations with a known treatment effect, and
//! a Monte-Carlo harness that scores estimators against that truth.
//!
//! Randomness comes from ChaCha8 seeded with `seed` (stream 1 for the pre
//! wave, 2 for the post wave). Uniforms are `(next_u64 >> 11) · 2⁻⁵³`, so a
//! given spec produces the same rows on every platform.

mod montecarlo;

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use montecarlo::{
    monte_carlo, render_monte_carlo, McError, McEstimator, McRow, Misspecification, MonteCarloConfig,
    MonteCarloReport,
};

use crate::tabular::{AnalysisFrame, Field, ObservationRecord, Wave, Zone, ZoneMap};

/// Outcome probabilities must stay inside this band for every covariate
/// combination, so the additive effect is exact rather than clipped.
pub const OUTCOME_BAND: (f64, f64) = (0.02, 0.98);

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("cannot read spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse spec: {0}")]
    Toml(#[from] toml::de::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SpecError> {
    Err(SpecError::Invalid(msg.into()))
}

/// Uniform integer range, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntRange {
    pub min: i64,
    pub max: i64,
}

/// Discrete distribution over integer codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Categorical {
    pub values: Vec<i64>,
    pub weights: Vec<f64>,
}

impl Categorical {
    fn new(values: &[i64], weights: &[f64]) -> Self {
        Categorical {
            values: values.to_vec(),
            weights: weights.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateSpec {
    /// State codes drawn uniformly; empty means every state in the zone map.
    pub states: Vec<u16>,
    pub age: IntRange,
    pub hh_size: IntRange,
    pub religion: Categorical,
    pub caste: Categorical,
    pub education: Categorical,
    pub wealth_index: Categorical,
    pub urban_rural: Categorical,
    pub gender: Categorical,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            states: Vec::new(),
            age: IntRange { min: 18, max: 90 },
            hh_size: IntRange { min: 1, max: 12 },
            religion: Categorical::new(&[1, 2, 3, 4], &[0.80, 0.14, 0.03, 0.03]),
            caste: Categorical::new(&[1, 2, 3, 4, 8], &[0.20, 0.10, 0.40, 0.28, 0.02]),
            education: Categorical::new(&[0, 1, 2, 3], &[0.30, 0.20, 0.35, 0.15]),
            wealth_index: Categorical::new(&[1, 2, 3, 4, 5], &[0.2; 5]),
            urban_rural: Categorical::new(&[1, 2], &[0.35, 0.65]),
            gender: Categorical::new(&[1, 2], &[0.88, 0.12]),
        }
    }
}

/// Intercept plus coefficients keyed by field name (`wealth_index`, `educ`, …).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    /// Common change between waves, applied to everyone in the post wave.
    #[serde(default)]
    pub post_shift: f64,
    /// Extra post-wave effect on treated units by zone name.
    #[serde(default)]
    pub zone_effects: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_wave: usize,
    pub seed: u64,
    /// Additive effect on the treated outcome probability in the post wave.
    pub true_att: f64,
    /// Odds multiplier of an unobserved binary confounder on treatment.
    #[serde(default = "one")]
    pub hidden_bias_gamma: f64,
    /// Additive outcome effect of the same unobserved confounder.
    #[serde(default)]
    pub hidden_outcome_effect: f64,
    #[serde(default)]
    pub covariates: CovariateSpec,
    /// Logistic treatment-assignment index on raw covariate codes.
    pub selection: LinearSpec,
    /// Linear-probability baseline outcome model (the `lpg_access` flag).
    pub outcome: OutcomeSpec,
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Confounded benchmark: poorer, rural, less educated and larger
    /// households are more likely to be treated and less likely to have the
    /// outcome; the post-wave effect on the treated is 0.021.
    pub fn benchmark() -> Self {
        let sel = [
            ("wealth_index", -0.35),
            ("urban_rural", 0.5),
            ("educ", -0.25),
            ("hhsize", 0.06),
            ("caste", -0.05),
            ("age", -0.005),
            ("gender", 0.2),
        ];
        let out = [
            ("wealth_index", 0.08),
            ("urban_rural", -0.1),
            ("educ", 0.04),
            ("hhsize", -0.005),
            ("age", 0.001),
        ];
        SyntheticSpec {
            n_per_wave: 20_000,
            seed: 20_150_401,
            true_att: 0.021,
            hidden_bias_gamma: 1.0,
            hidden_outcome_effect: 0.0,
            covariates: CovariateSpec::default(),
            selection: LinearSpec {
                intercept: -0.9,
                coefficients: sel.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            },
            outcome: OutcomeSpec {
                intercept: 0.2,
                coefficients: out.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                post_shift: 0.15,
                zone_effects: BTreeMap::new(),
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: SyntheticSpec = toml::from_str(text)?;
        spec.compile()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self, SpecError> {
        SyntheticSpec::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Compiled, SpecError> {
        if self.n_per_wave == 0 {
            return invalid("n_per_wave must be positive");
        }
        if !(self.hidden_bias_gamma.is_finite() && self.hidden_bias_gamma >= 1.0) {
            return invalid("hidden_bias_gamma must be a finite number >= 1");
        }
        if !self.true_att.is_finite() || !self.hidden_outcome_effect.is_finite() {
            return invalid("effects must be finite");
        }
        let zones = ZoneMap::default();
        let c = &self.covariates;
        let states: Vec<u16> = if c.states.is_empty() {
            zones.state_codes().collect()
        } else {
            c.states.clone()
        };
        let mut state_zone = Vec::with_capacity(states.len());
        for &s in &states {
            match zones.zone_of(s) {
                Ok(z) => state_zone.push(z),
                Err(_) => return invalid(format!("state {s} is not in the zone map")),
            }
        }
        let range = |name: &str, r: IntRange, lo: i64, hi: i64| -> Result<Sampler, SpecError> {
            if r.min > r.max || r.min < lo || r.max > hi {
                return invalid(format!("{name} range must lie within [{lo}, {hi}]"));
            }
            Ok(Sampler::Range(r))
        };
        let cat = |field: Field, d: &Categorical| -> Result<Sampler, SpecError> {
            if d.values.is_empty() || d.values.len() != d.weights.len() {
                return invalid(format!("{field}: values and weights must be non-empty and equal length"));
            }
            if d.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return invalid(format!("{field}: weights must be finite and non-negative"));
            }
            let total: f64 = d.weights.iter().sum();
            if total <= 0.0 {
                return invalid(format!("{field}: weights sum to zero"));
            }
            let mut probe = placeholder();
            for &v in &d.values {
                set_field(&mut probe, field, v);
                if let Err(violation) = probe.validate() {
                    return invalid(format!("{field} value {v}: {}", violation.reason));
                }
            }
            let mut acc = 0.0;
            let cumulative = d
                .weights
                .iter()
                .map(|w| {
                    acc += w / total;
                    acc
                })
                .collect();
            Ok(Sampler::Categorical {
                values: d.values.clone(),
                cumulative,
            })
        };
        let samplers = [
            (Field::Age, range("age", c.age, 10, 98)?),
            (Field::HhSize, range("hh_size", c.hh_size, 1, 41)?),
            (Field::Religion, cat(Field::Religion, &c.religion)?),
            (Field::Caste, cat(Field::Caste, &c.caste)?),
            (Field::Education, cat(Field::Education, &c.education)?),
            (Field::WealthIndex, cat(Field::WealthIndex, &c.wealth_index)?),
            (Field::UrbanRural, cat(Field::UrbanRural, &c.urban_rural)?),
            (Field::Gender, cat(Field::Gender, &c.gender)?),
        ];
        let selection = linear_terms(&self.selection.coefficients, "selection")?;
        let outcome = linear_terms(&self.outcome.coefficients, "outcome")?;
        let mut zone_effects = BTreeMap::new();
        for (name, eff) in &self.outcome.zone_effects {
            let z: Zone = name
                .parse()
                .map_err(|_| SpecError::Invalid(format!("unknown zone `{name}` in zone_effects")))?;
            if !eff.is_finite() {
                return invalid("zone effects must be finite");
            }
            zone_effects.insert(z, *eff);
        }
        let compiled = Compiled {
            states,
            state_zone,
            samplers,
            selection,
            outcome,
            zone_effects,
        };
        compiled.check_outcome_band(self)?;
        Ok(compiled)
    }

    /// Generates one wave. Records are i.i.d. given the spec and seed.
    pub fn generate(&self, wave: Wave) -> Result<AnalysisFrame, SpecError> {
        let c = self.compile()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(wave.code() as u64 + 1);
        let post = wave == Wave::Post;
        let log_gamma = self.hidden_bias_gamma.ln();
        let mut records = Vec::with_capacity(self.n_per_wave);
        for i in 0..self.n_per_wave {
            let mut rec = placeholder();
            rec.household_id = format!("{}-{i:07}", wave.as_str());
            let si = uniform_index(&mut rng, c.states.len());
            rec.state = c.states[si];
            for (field, sampler) in &c.samplers {
                let v = sampler.draw(&mut rng);
                set_field(&mut rec, *field, v);
            }
            rec.wave = wave;
            let hidden = uniform(&mut rng) < 0.5;
            let index = self.selection.intercept
                + c.selection.iter().map(|(f, b)| b * value(&rec, *f)).sum::<f64>()
                + if hidden { log_gamma } else { 0.0 };
            rec.treatment = uniform(&mut rng) < logistic(index);
            let mut p = self.outcome.intercept
                + c.outcome.iter().map(|(f, b)| b * value(&rec, *f)).sum::<f64>()
                + if hidden { self.hidden_outcome_effect } else { 0.0 };
            if post {
                p += self.outcome.post_shift;
                if rec.treatment {
                    p += self.true_att + c.zone_effects.get(&c.state_zone[si]).copied().unwrap_or(0.0);
                }
            }
            rec.lpg_access = uniform(&mut rng) < p;
            rec.firewood_use = uniform(&mut rng) < 0.9 - 0.6 * p;
            records.push(rec);
        }
        Ok(AnalysisFrame::from_records(
            records,
            format!("synthetic:seed={}:{}", self.seed, wave.as_str()),
        ))
    }

    /// Same spec with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SyntheticSpec {
            seed,
            ..self.clone()
        }
    }
}

enum Sampler {
    Range(IntRange),
    Categorical { values: Vec<i64>, cumulative: Vec<f64> },
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> i64 {
        match self {
            Sampler::Range(r) => r.min + uniform_index(rng, (r.max - r.min + 1) as usize) as i64,
            Sampler::Categorical { values, cumulative } => {
                let u = uniform(rng);
                let k = cumulative.partition_point(|c| *c <= u).min(values.len() - 1);
                values[k]
            }
        }
    }

    fn extremes(&self) -> (f64, f64) {
        match self {
            Sampler::Range(r) => (r.min as f64, r.max as f64),
            Sampler::Categorical { values, .. } => (
                *values.iter().min().expect("non-empty") as f64,
                *values.iter().max().expect("non-empty") as f64,
            ),
        }
    }
}

struct Compiled {
    states: Vec<u16>,
    state_zone: Vec<Zone>,
    samplers: [(Field, Sampler); 8],
    selection: Vec<(Field, f64)>,
    outcome: Vec<(Field, f64)>,
    zone_effects: BTreeMap<Zone, f64>,
}

impl Compiled {
    fn extremes(&self, field: Field) -> (f64, f64) {
        if field == Field::State {
            let lo = *self.states.iter().min().expect("states non-empty") as f64;
            let hi = *self.states.iter().max().expect("states non-empty") as f64;
            return (lo, hi);
        }
        self.samplers
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, s)| s.extremes())
            .expect("every covariate has a sampler")
    }

    /// Range of the outcome probability over the covariate box, the hidden
    /// confounder, both waves and both arms.
    fn check_outcome_band(&self, spec: &SyntheticSpec) -> Result<(), SpecError> {
        let (mut lo, mut hi) = (spec.outcome.intercept, spec.outcome.intercept);
        for (f, b) in &self.outcome {
            let (a, z) = self.extremes(*f);
            lo += (b * a).min(b * z);
            hi += (b * a).max(b * z);
        }
        let h = spec.hidden_outcome_effect;
        lo += h.min(0.0);
        hi += h.max(0.0);
        let zone_lo = self.zone_effects.values().copied().fold(0.0, f64::min);
        let zone_hi = self.zone_effects.values().copied().fold(0.0, f64::max);
        let post = spec.outcome.post_shift;
        let treated_lo = post + spec.true_att + zone_lo;
        let treated_hi = post + spec.true_att + zone_hi;
        let shift_lo = 0.0f64.min(post).min(treated_lo);
        let shift_hi = 0.0f64.max(post).max(treated_hi);
        let (min, max) = (lo + shift_lo, hi + shift_hi);
        if min < OUTCOME_BAND.0 || max > OUTCOME_BAND.1 {
            return invalid(format!(
                "outcome probability ranges over [{min:.4}, {max:.4}], outside [{}, {}]",
                OUTCOME_BAND.0, OUTCOME_BAND.1
            ));
        }
        Ok(())
    }
}

fn linear_terms(map: &BTreeMap<String, f64>, what: &str) -> Result<Vec<(Field, f64)>, SpecError> {
    let mut out = Vec::with_capacity(map.len());
    for (name, b) in map {
        let f: Field = name
            .parse()
            .map_err(|_| SpecError::Invalid(format!("{what}: unknown field `{name}`")))?;
        let covariate = matches!(
            f,
            Field::State
                | Field::Age
                | Field::Religion
                | Field::Caste
                | Field::Education
                | Field::WealthIndex
                | Field::UrbanRural
                | Field::Gender
                | Field::HhSize
        );
        if !covariate {
            return invalid(format!("{what}: `{name}` is not a household covariate"));
        }
        if !b.is_finite() {
            return invalid(format!("{what}: coefficient on `{name}` is not finite"));
        }
        out.push((f, *b));
    }
    Ok(out)
}

fn placeholder() -> ObservationRecord {
    ObservationRecord {
        household_id: String::new(),
        state: 1,
        age: 40,
        religion: 1,
        caste: 1,
        education: 0,
        wealth_index: 1,
        urban_rural: 1,
        gender: 1,
        hh_size: 1,
        treatment: false,
        lpg_access: false,
        firewood_use: false,
        wave: Wave::Pre,
    }
}

fn set_field(rec: &mut ObservationRecord, field: Field, v: i64) {
    match field {
        Field::Age => rec.age = v as u16,
        Field::HhSize => rec.hh_size = v as u16,
        Field::Religion => rec.religion = v as u16,
        Field::Caste => rec.caste = v as u8,
        Field::Education => rec.education = v as u8,
        Field::WealthIndex => rec.wealth_index = v as u8,
        Field::UrbanRural => rec.urban_rural = v as u8,
        Field::Gender => rec.gender = v as u8,
        _ => unreachable!("not a sampled covariate"),
    }
}

fn value(rec: &ObservationRecord, f: Field) -> f64 {
    f.numeric(rec).expect("covariate")
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}
