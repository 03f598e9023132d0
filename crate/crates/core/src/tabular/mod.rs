//! Household-survey records, frames, and the operations that slice them.

mod filter;
mod load;
mod summary;
mod zone;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{filter_subgroup, CmpOp, Predicate};
pub use load::{load_frame, read_frame, write_frame, LoadOptions};
pub use summary::{proportion_table, render_proportion_table, ProportionRow};
pub use zone::{Zone, ZoneMap};

pub const SCHEMA_VERSION: &str = "1";

/// Caste code the survey uses for "don't know".
pub const CASTE_DONT_KNOW: u8 = 8;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("schema mismatch: {rejected} of {total} rows rejected (first: {first})")]
    SchemaMismatch {
        rejected: usize,
        total: usize,
        first: String,
    },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{0}` is not usable here: {1}")]
    FieldNotUsable(String, &'static str),
    #[error("state code {0} has no zone (union territory or unknown code)")]
    UnmappedState(u16),
    #[error("invalid predicate `{0}`")]
    InvalidPredicate(String),
    #[error("invalid zone map line {line}: {reason}")]
    InvalidZoneMap { line: usize, reason: String },
    #[error("unknown zone `{0}`")]
    UnknownZone(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Pre,
    Post,
}

impl Wave {
    pub fn as_str(self) -> &'static str {
        match self {
            Wave::Pre => "pre",
            Wave::Post => "post",
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Wave::Pre => 0,
            Wave::Post => 1,
        }
    }
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Wave {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" | "0" | "baseline" => Ok(Wave::Pre),
            "post" | "1" => Ok(Wave::Post),
            other => Err(format!("unknown wave `{other}` (expected pre or post)")),
        }
    }
}

/// One household row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationRecord {
    pub household_id: String,
    pub state: u16,
    /// Age of the household head in years.
    pub age: u16,
    pub religion: u16,
    /// 1=SC, 2=ST, 3=OBC, 4=none, 8=don't know.
    pub caste: u8,
    pub education: u8,
    /// Within-state wealth quintile, 1 (poorest) to 5 (richest).
    pub wealth_index: u8,
    /// 1=urban, 2=rural.
    pub urban_rural: u8,
    /// 1=male, 2=female.
    pub gender: u8,
    pub hh_size: u16,
    /// BPL card holder.
    pub treatment: bool,
    pub lpg_access: bool,
    pub firewood_use: bool,
    pub wave: Wave,
}

/// Why a record failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: Field,
    pub reason: String,
}

impl ObservationRecord {
    pub fn validate(&self) -> Result<(), Violation> {
        fn fail(field: Field, reason: impl Into<String>) -> Result<(), Violation> {
            Err(Violation {
                field,
                reason: reason.into(),
            })
        }
        if !(10..=98).contains(&self.age) {
            return fail(Field::Age, "age out of range [10,98]");
        }
        if !(1..=41).contains(&self.hh_size) {
            return fail(Field::HhSize, "hhsize out of range [1,41]");
        }
        if !(1..=5).contains(&self.wealth_index) {
            return fail(Field::WealthIndex, "wealth_index out of range [1,5]");
        }
        if !(1..=2).contains(&self.urban_rural) {
            return fail(Field::UrbanRural, "urban_rural must be 1 or 2");
        }
        if !(1..=2).contains(&self.gender) {
            return fail(Field::Gender, "gender must be 1 or 2");
        }
        if !matches!(self.caste, 1..=4 | CASTE_DONT_KNOW) {
            return fail(Field::Caste, "caste must be one of 1,2,3,4,8");
        }
        if !matches!(self.religion, 1..=9 | 96) {
            return fail(Field::Religion, "religion must be 1-9 or 96");
        }
        if self.education > 3 {
            return fail(Field::Education, "educ out of range [0,3]");
        }
        if self.state == 0 {
            return fail(Field::State, "state code must be positive");
        }
        Ok(())
    }
}

/// Addressable columns of a record, plus the derived `zone`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    HouseholdId,
    State,
    Age,
    Religion,
    Caste,
    Education,
    WealthIndex,
    UrbanRural,
    Gender,
    HhSize,
    Treatment,
    LpgAccess,
    FirewoodUse,
    Wave,
    Zone,
}

impl Field {
    pub const ALL: [Field; 15] = [
        Field::HouseholdId,
        Field::State,
        Field::Age,
        Field::Religion,
        Field::Caste,
        Field::Education,
        Field::WealthIndex,
        Field::UrbanRural,
        Field::Gender,
        Field::HhSize,
        Field::Treatment,
        Field::LpgAccess,
        Field::FirewoodUse,
        Field::Wave,
        Field::Zone,
    ];

    /// Canonical column name, as written in headers and reports.
    pub fn name(self) -> &'static str {
        match self {
            Field::HouseholdId => "hhid",
            Field::State => "state",
            Field::Age => "age",
            Field::Religion => "religion",
            Field::Caste => "caste",
            Field::Education => "educ",
            Field::WealthIndex => "wealth_index",
            Field::UrbanRural => "urban_rural",
            Field::Gender => "gender",
            Field::HhSize => "hhsize",
            Field::Treatment => "bplcard",
            Field::LpgAccess => "lpg_access",
            Field::FirewoodUse => "firewood_use",
            Field::Wave => "wave",
            Field::Zone => "zone",
        }
    }

    /// Report label in the style of the published balance tables.
    pub fn label(self) -> &'static str {
        match self {
            Field::HouseholdId => "hhid",
            Field::State => "State",
            Field::Age => "Age",
            Field::Religion => "Religion",
            Field::Caste => "Caste",
            Field::Education => "Educ",
            Field::WealthIndex => "Wealth Index",
            Field::UrbanRural => "urban_rural",
            Field::Gender => "Gender",
            Field::HhSize => "hhsize",
            Field::Treatment => "BPL card",
            Field::LpgAccess => "LPG Access",
            Field::FirewoodUse => "Firewood Use",
            Field::Wave => "Wave",
            Field::Zone => "Zone",
        }
    }

    pub fn is_boolean(self) -> bool {
        matches!(self, Field::Treatment | Field::LpgAccess | Field::FirewoodUse)
    }

    /// Integer-coded categorical fields whose codes carry no order.
    pub fn is_categorical(self) -> bool {
        matches!(self, Field::State | Field::Religion | Field::Caste | Field::Zone)
    }

    /// Integer value of the field; `zone` needs the state map.
    pub fn value(self, rec: &ObservationRecord, zones: &ZoneMap) -> Result<i64, FrameError> {
        match self {
            Field::Zone => Ok(zones.zone_of(rec.state)?.code()),
            Field::HouseholdId => Err(FrameError::FieldNotUsable(
                self.name().into(),
                "household ids are opaque strings",
            )),
            other => Ok(other.numeric(rec).expect("numeric field") as i64),
        }
    }

    /// Numeric value of a record column; `None` for hhid and zone.
    pub fn numeric(self, rec: &ObservationRecord) -> Option<f64> {
        let v = match self {
            Field::HouseholdId | Field::Zone => return None,
            Field::State => rec.state as f64,
            Field::Age => rec.age as f64,
            Field::Religion => rec.religion as f64,
            Field::Caste => rec.caste as f64,
            Field::Education => rec.education as f64,
            Field::WealthIndex => rec.wealth_index as f64,
            Field::UrbanRural => rec.urban_rural as f64,
            Field::Gender => rec.gender as f64,
            Field::HhSize => rec.hh_size as f64,
            Field::Treatment => rec.treatment as u8 as f64,
            Field::LpgAccess => rec.lpg_access as u8 as f64,
            Field::FirewoodUse => rec.firewood_use as u8 as f64,
            Field::Wave => rec.wave.code() as f64,
        };
        Some(v)
    }

    /// Boolean view of an indicator field.
    pub fn flag(self, rec: &ObservationRecord) -> Option<bool> {
        match self {
            Field::Treatment => Some(rec.treatment),
            Field::LpgAccess => Some(rec.lpg_access),
            Field::FirewoodUse => Some(rec.firewood_use),
            _ => None,
        }
    }

    /// Human label of an integer field value (zone names, wave names).
    pub fn display_value(self, value: i64) -> String {
        match self {
            Field::Zone => Zone::from_code(value)
                .map(|z| z.name().to_string())
                .unwrap_or_else(|| value.to_string()),
            Field::Wave => match value {
                0 => "pre".into(),
                1 => "post".into(),
                v => v.to_string(),
            },
            _ => value.to_string(),
        }
    }

    /// Parses a predicate value: zone and wave names are accepted for those fields.
    pub fn parse_value(self, raw: &str) -> Result<i64, FrameError> {
        let raw = raw.trim();
        match self {
            Field::Zone => {
                if let Ok(code) = raw.parse::<i64>() {
                    return Ok(code);
                }
                Ok(raw.parse::<Zone>()?.code())
            }
            Field::Wave => raw
                .parse::<Wave>()
                .map(Wave::code)
                .map_err(|_| FrameError::InvalidPredicate(raw.into())),
            f if f.is_boolean() => match raw.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => Ok(1),
                "0" | "false" | "no" => Ok(0),
                _ => Err(FrameError::InvalidPredicate(raw.into())),
            },
            _ => raw
                .parse::<i64>()
                .map_err(|_| FrameError::InvalidPredicate(raw.into())),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let field = match norm.as_str() {
            "hhid" | "household_id" => Field::HouseholdId,
            "state" => Field::State,
            "age" => Field::Age,
            "religion" => Field::Religion,
            "caste" => Field::Caste,
            "educ" | "education" | "hheduc" => Field::Education,
            "wealth_index" | "wi_state" | "wealth" => Field::WealthIndex,
            "urban_rural" | "urban" => Field::UrbanRural,
            "gender" => Field::Gender,
            "hhsize" | "hh_size" => Field::HhSize,
            "bplcard" | "bpl_card" | "treatment" => Field::Treatment,
            "lpg_access" | "lpg" => Field::LpgAccess,
            "firewood_use" | "firewood" => Field::FirewoodUse,
            "wave" => Field::Wave,
            "zone" => Field::Zone,
            _ => return Err(FrameError::UnknownField(s.trim().to_string())),
        };
        Ok(field)
    }
}

/// Where a frame came from and what happened while loading it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source: String,
    pub input_rows: usize,
    pub loaded: usize,
    pub rejected: usize,
}

/// One rejected input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}\t{}\t{}", self.row, self.field, self.reason)
    }
}

/// An immutable, validated collection of records.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFrame {
    pub records: Vec<ObservationRecord>,
    pub schema_version: String,
    pub provenance: Provenance,
    /// `None` marks a mixed-wave frame.
    pub wave: Option<Wave>,
    pub rejections: Vec<Rejection>,
    /// Count of empty cells per column among rejected rows.
    pub missingness: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl AnalysisFrame {
    /// Wraps records produced in memory. The wave tag is derived from the
    /// records: a single shared wave, or mixed.
    pub fn from_records(records: Vec<ObservationRecord>, source: impl Into<String>) -> Self {
        let wave = common_wave(&records);
        let n = records.len();
        AnalysisFrame {
            records,
            schema_version: SCHEMA_VERSION.to_string(),
            provenance: Provenance {
                source: source.into(),
                input_rows: n,
                loaded: n,
                rejected: 0,
            },
            wave,
            rejections: Vec::new(),
            missingness: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_mixed_wave(&self) -> bool {
        self.wave.is_none() && !self.records.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treatment).count()
    }

    /// Stacks frames; the result is marked mixed-wave when waves differ.
    pub fn concat(frames: &[&AnalysisFrame]) -> AnalysisFrame {
        let records: Vec<_> = frames.iter().flat_map(|f| f.records.iter().cloned()).collect();
        let source = frames
            .iter()
            .map(|f| f.provenance.source.as_str())
            .collect::<Vec<_>>()
            .join("+");
        AnalysisFrame::from_records(records, source)
    }

    pub(crate) fn derive(&self, records: Vec<ObservationRecord>) -> AnalysisFrame {
        AnalysisFrame {
            wave: if records.is_empty() { self.wave } else { common_wave(&records) },
            records,
            schema_version: self.schema_version.clone(),
            provenance: self.provenance.clone(),
            rejections: self.rejections.clone(),
            missingness: self.missingness.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

fn common_wave(records: &[ObservationRecord]) -> Option<Wave> {
    let first = records.first()?.wave;
    records.iter().all(|r| r.wave == first).then_some(first)
}
