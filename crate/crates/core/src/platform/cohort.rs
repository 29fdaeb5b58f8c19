use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{SubjectId, TraitScalar};

use super::log::EventLog;
use super::traits::{TraitError, TraitRegistry};

pub const MAX_PREDICATE_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CmpOp {
    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Ge => ord != Less,
            CmpOp::Gt => ord == Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constant {
    Num(f64),
    Bool(bool),
    Str(String),
}

/// Boolean expression over trait comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    True,
    False,
    Cmp {
        #[serde(rename = "trait")]
        trait_name: String,
        cmp: CmpOp,
        value: Constant,
    },
    And { of: Vec<Predicate> },
    Or { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

impl Predicate {
    pub fn cmp(trait_name: &str, cmp: CmpOp, value: f64) -> Self {
        Predicate::Cmp {
            trait_name: trait_name.to_string(),
            cmp,
            value: Constant::Num(value),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Predicate::And { of } | Predicate::Or { of } => {
                1 + of.iter().map(Predicate::depth).max().unwrap_or(0)
            }
            Predicate::Not { of } => 1 + of.depth(),
            _ => 1,
        }
    }

    fn visit_traits<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Predicate::Cmp { trait_name, .. } => out.push(trait_name),
            Predicate::And { of } | Predicate::Or { of } => {
                of.iter().for_each(|p| p.visit_traits(out))
            }
            Predicate::Not { of } => of.visit_traits(out),
            Predicate::True | Predicate::False => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CohortError {
    #[error(transparent)]
    Trait(#[from] TraitError),
    #[error("predicate depth {0} exceeds {MAX_PREDICATE_DEPTH}")]
    TooDeep(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDefinition {
    pub predicate: Predicate,
}

impl CohortDefinition {
    pub fn everyone() -> Self {
        CohortDefinition {
            predicate: Predicate::True,
        }
    }

    pub fn validate(&self, registry: &TraitRegistry) -> Result<(), CohortError> {
        let depth = self.predicate.depth();
        if depth > MAX_PREDICATE_DEPTH {
            return Err(CohortError::TooDeep(depth));
        }
        let mut names = Vec::new();
        self.predicate.visit_traits(&mut names);
        for n in names {
            registry.get(n)?;
        }
        Ok(())
    }
}

fn compare(value: &TraitScalar, cmp: CmpOp, constant: &Constant) -> bool {
    let ord = match (value, constant) {
        (TraitScalar::Missing, _) => return false,
        (TraitScalar::Str(a), Constant::Str(b)) => a.as_str().cmp(b.as_str()),
        (TraitScalar::Str(_), _) | (_, Constant::Str(_)) => return false,
        (v, Constant::Num(b)) => match v.as_num().and_then(|a| a.partial_cmp(b)) {
            Some(o) => o,
            None => return false,
        },
        (v, Constant::Bool(b)) => match v.as_num() {
            Some(a) => a.total_cmp(&if *b { 1.0 } else { 0.0 }),
            None => return false,
        },
    };
    cmp.holds(ord)
}

struct Evaluator<'a> {
    log: &'a EventLog,
    registry: &'a TraitRegistry,
    as_of_ms: i64,
    cache: BTreeMap<&'a str, TraitScalar>,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, subject: &SubjectId, p: &'a Predicate) -> Result<bool, CohortError> {
        Ok(match p {
            Predicate::True => true,
            Predicate::False => false,
            Predicate::Cmp {
                trait_name,
                cmp,
                value,
            } => {
                if !self.cache.contains_key(trait_name.as_str()) {
                    let v = self
                        .registry
                        .compute(self.log, subject, trait_name, self.as_of_ms)?
                        .value;
                    self.cache.insert(trait_name, v);
                }
                compare(&self.cache[trait_name.as_str()], *cmp, value)
            }
            Predicate::And { of } => {
                for q in of {
                    if !self.eval(subject, q)? {
                        return Ok(false);
                    }
                }
                true
            }
            Predicate::Or { of } => {
                for q in of {
                    if self.eval(subject, q)? {
                        return Ok(true);
                    }
                }
                false
            }
            Predicate::Not { of } => !self.eval(subject, of)?,
        })
    }
}

/// Subjects (at least one persisted event) whose traits at `as_of_ms`
/// satisfy the predicate.
pub fn evaluate_cohort(
    log: &EventLog,
    registry: &TraitRegistry,
    def: &CohortDefinition,
    as_of_ms: i64,
) -> Result<BTreeSet<SubjectId>, CohortError> {
    def.validate(registry)?;
    let mut out = BTreeSet::new();
    for subject in log.subjects() {
        let mut ev = Evaluator {
            log,
            registry,
            as_of_ms,
            cache: BTreeMap::new(),
        };
        if ev.eval(subject, &def.predicate)? {
            out.insert(subject.clone());
        }
    }
    Ok(out)
}
