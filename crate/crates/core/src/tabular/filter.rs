use std::fmt;
use std::str::FromStr;

use super::{AnalysisFrame, Field, FrameError, ZoneMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// A single `field op value` condition. Lists of predicates are conjunctive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predicate {
    pub field: Field,
    pub op: CmpOp,
    pub value: i64,
}

impl Predicate {
    pub fn new(field: Field, op: CmpOp, value: i64) -> Self {
        Predicate { field, op, value }
    }

    pub fn eq(field: Field, value: i64) -> Self {
        Predicate::new(field, CmpOp::Eq, value)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            self.field.name(),
            self.op.symbol(),
            self.field.display_value(self.value)
        )
    }
}

impl FromStr for Predicate {
    type Err = FrameError;

    /// Parses `zone==East`, `caste!=2`, `age>=30`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const OPS: [(&str, CmpOp); 7] = [
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("=", CmpOp::Eq),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ];
        for (tok, op) in OPS {
            if let Some(pos) = s.find(tok) {
                let field: Field = s[..pos].parse()?;
                if field == Field::HouseholdId {
                    return Err(FrameError::FieldNotUsable(
                        field.name().into(),
                        "household ids cannot be compared",
                    ));
                }
                let value = field.parse_value(&s[pos + tok.len()..])?;
                return Ok(Predicate { field, op, value });
            }
        }
        Err(FrameError::InvalidPredicate(s.to_string()))
    }
}

/// Records satisfying every predicate. The input frame is untouched.
pub fn filter_subgroup(
    frame: &AnalysisFrame,
    predicates: &[Predicate],
    zones: &ZoneMap,
) -> Result<AnalysisFrame, FrameError> {
    let mut kept = Vec::new();
    for rec in &frame.records {
        let mut ok = true;
        for p in predicates {
            if !p.op.holds(p.field.value(rec, zones)?, p.value) {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(rec.clone());
        }
    }
    Ok(frame.derive(kept))
}
