//! Common support, 1:1 nearest-neighbour matching without replacement,
//! and balance diagnostics.

mod balance;
mod density;
mod nearest;
mod support;

use thiserror::Error;

pub use balance::{
    balance_report, render_balance, render_balance_summary, standardized_bias, BalanceReport, BalanceRow,
    BIAS_THRESHOLD, RUBIN_B_THRESHOLD, RUBIN_R_RANGE,
};
pub use density::{density_profile, density_quadrants, max_density_gap, render_density, DensityRow};
pub use nearest::{nn_match, render_pairs, MatchOptions, MatchedPair, MatchedSample};
pub use support::{common_support, SupportRegion};

/// Identifier of a unit: a row index into the frame being matched.
pub type UnitId = usize;

/// A unit and its propensity score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub id: UnitId,
    pub score: f64,
}

impl Scored {
    pub fn new(id: UnitId, score: f64) -> Self {
        Scored { id, score }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("{0} score list is empty")]
    EmptyInput(&'static str),
    #[error("score ranges do not overlap: treated [{t_lo}, {t_hi}], control [{c_lo}, {c_hi}]")]
    EmptySupport { t_lo: f64, t_hi: f64, c_lo: f64, c_hi: f64 },
    #[error("score for unit {0} is not a finite number")]
    InvalidScore(UnitId),
    #[error("matched sample is empty")]
    EmptySample,
    #[error("density needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

pub(crate) fn check_finite(units: &[Scored]) -> Result<(), MatchError> {
    match units.iter().find(|u| !u.score.is_finite()) {
        Some(u) => Err(MatchError::InvalidScore(u.id)),
        None => Ok(()),
    }
}
