//! Program-evaluation toolkit for household survey microdata.
//!
//! The crate covers the whole causal pipeline used to evaluate a targeted
//! subsidy from two repeated cross-sections:
//!
//! - [`tabular`]: loading, validating, recoding and slicing survey rows.
//! - [`glm`]: logit/probit treatment-assignment models fitted by IRLS.
//! - [`psmatch`]: common support, greedy 1:1 nearest-neighbour matching
//!   without replacement, and balance diagnostics.
//! - [`effects`]: matched ATT, DiD of ATTs, IPW and AIPW.
//! - [`sensitivity`]: Rosenbaum bounds via Mantel–Haenszel statistics.
//! - [`synthgen`]: synthetic populations with known effects and a
//!   Monte-Carlo harness.
//! - [`pipeline`]: the config-driven runner and report emitters.

pub mod effects;
pub mod glm;
mod linalg;
pub mod pipeline;
pub mod psmatch;
pub mod sensitivity;
pub mod stats;
pub mod synthgen;
pub mod tabular;

pub use effects::{AttEstimate, DidEstimate, Estimand, WeightedEstimate};
pub use glm::{DesignSpec, FittedPropensityModel, Link};
pub use psmatch::{BalanceReport, MatchedSample, SupportRegion};
pub use sensitivity::{GammaGrid, MhBoundRow};
pub use tabular::{AnalysisFrame, Field, ObservationRecord, Wave, Zone, ZoneMap};
