//! Metadata predicates applied before similarity scoring.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metadata::{MetaValue, Metadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FilterValue {
    One(MetaValue),
    Many(Vec<MetaValue>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub key: String,
    pub op: CmpOp,
    pub value: FilterValue,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("filter clause {index}: {reason}")]
    InvalidClause { index: usize, reason: String },
}

impl Clause {
    pub fn new(key: impl Into<String>, op: CmpOp, value: impl Into<MetaValue>) -> Self {
        Self {
            key: key.into(),
            op,
            value: FilterValue::One(value.into()),
        }
    }

    pub fn one_of(key: impl Into<String>, values: Vec<MetaValue>) -> Self {
        Self {
            key: key.into(),
            op: CmpOp::In,
            value: FilterValue::Many(values),
        }
    }

    /// True only if the key is present, its value is comparable with the
    /// clause value, and the relation holds. Missing keys and type mismatches
    /// never match, not even for `!=`.
    pub fn matches(&self, metadata: &Metadata) -> bool {
        let Some(actual) = metadata.get(&self.key) else {
            return false;
        };
        match (&self.op, &self.value) {
            (CmpOp::In, FilterValue::Many(options)) => options
                .iter()
                .any(|o| actual.compare(o) == Some(Ordering::Equal)),
            (op, FilterValue::One(expected)) => match actual.compare(expected) {
                None => false,
                Some(ord) => match op {
                    CmpOp::Eq => ord == Ordering::Equal,
                    CmpOp::Ne => ord != Ordering::Equal,
                    CmpOp::Lt => ord == Ordering::Less,
                    CmpOp::Le => ord != Ordering::Greater,
                    CmpOp::Gt => ord == Ordering::Greater,
                    CmpOp::Ge => ord != Ordering::Less,
                    CmpOp::In => false,
                },
            },
            _ => false,
        }
    }
}

/// Conjunction of clauses. An empty predicate matches everything.
///
/// Serialized as a JSON array of `{"key", "op", "value"}` objects; `in`
/// takes an array value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Clause>", into = "Vec<Clause>")]
pub struct FilterPredicate {
    clauses: Vec<Clause>,
}

impl FilterPredicate {
    pub fn new(clauses: Vec<Clause>) -> Result<Self, FilterError> {
        for (index, c) in clauses.iter().enumerate() {
            let invalid = |reason: &str| FilterError::InvalidClause {
                index,
                reason: reason.to_owned(),
            };
            if c.key.is_empty() {
                return Err(invalid("empty key"));
            }
            match (&c.op, &c.value) {
                (CmpOp::In, FilterValue::One(_)) => {
                    return Err(invalid("`in` needs an array of values"))
                }
                (op, FilterValue::Many(_)) if *op != CmpOp::In => {
                    return Err(invalid("only `in` accepts an array"))
                }
                _ => {}
            }
        }
        Ok(Self { clauses })
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn matches(&self, metadata: &Metadata) -> bool {
        self.clauses.iter().all(|c| c.matches(metadata))
    }
}

impl TryFrom<Vec<Clause>> for FilterPredicate {
    type Error = FilterError;

    fn try_from(clauses: Vec<Clause>) -> Result<Self, Self::Error> {
        Self::new(clauses)
    }
}

impl From<FilterPredicate> for Vec<Clause> {
    fn from(p: FilterPredicate) -> Self {
        p.clauses
    }
}
