//! A SPARQL subset: exactly the dialect produced by [`crate::query_gen`].
//!
//! Supported: `PREFIX` declarations, `SELECT` of variables and
//! `(AGG(?x) AS ?y)` with `COUNT`/`MIN`/`MAX`/`SUM`/`AVG`, basic graph
//! patterns, `VALUES`, `OPTIONAL`, `GROUP BY` and `LIMIT`. Anything else is
//! rejected with [`SparqlError::Unsupported`].
//!
//! Identifiers may be written bare (`Q1`, `P1`), prefixed (`wd:Q1`,
//! `wdt:P1`) or as IRIs; in every case the local name is the graph id.

mod exec;
mod lexer;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{EntityId, PropertyId, Value};

pub use exec::execute;
pub use parser::parse;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SparqlError {
    #[error("parse error at {position}: {reason}")]
    Parse { position: usize, reason: String },
    #[error("unsupported syntax: {0}")]
    Unsupported(String),
}

/// A value bound to a variable in a result row.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Property(PropertyId),
    Value(Value),
}

impl Term {
    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Term::Value(v) => Some(v),
            Term::Property(_) => None,
        }
    }

    pub fn as_entity(&self) -> Option<&EntityId> {
        self.as_value().and_then(Value::as_entity)
    }

    pub fn as_property(&self) -> Option<&PropertyId> {
        match self {
            Term::Property(p) => Some(p),
            Term::Value(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Property(p) => write!(f, "{p}"),
            Term::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Rows of variable bindings; `None` marks an unbound variable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BindingTable {
    pub variables: Vec<String>,
    pub rows: Vec<Vec<Option<Term>>>,
}

impl BindingTable {
    pub fn new(variables: Vec<String>) -> Self {
        BindingTable {
            variables,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, variable: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == variable)
    }

    /// Appends `other`'s rows; both tables must project the same variables.
    pub fn extend(&mut self, other: BindingTable) {
        debug_assert_eq!(self.variables, other.variables);
        self.rows.extend(other.rows);
    }

    /// Rows rendered as strings and sorted, for multiset comparisons.
    pub fn sorted_rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|t| t.as_ref().map_or_else(String::new, canonical))
                    .collect()
            })
            .collect();
        rows.sort();
        rows
    }
}

/// A kind-tagged rendering where numerically equal decimals compare equal.
fn canonical(term: &Term) -> String {
    match term {
        Term::Property(p) => format!("p:{p}"),
        Term::Value(Value::Entity(e)) => format!("e:{e}"),
        Term::Value(Value::Number(d)) => format!("n:{}", d.to_f64()),
        Term::Value(Value::Text(s)) => format!("s:{s}"),
        Term::Value(Value::DateTime(t)) => format!("d:{}", t.instant().to_rfc3339()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum PatternTerm {
    Var(String),
    /// An identifier; resolves to an entity or property depending on position.
    Node(String),
    Literal(LiteralValue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum LiteralValue {
    Number(String),
    Text(String),
    DateTime(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum GroupItem {
    Triple(TriplePattern),
    Values {
        variables: Vec<String>,
        rows: Vec<Vec<Option<PatternTerm>>>,
    },
    Optional(Vec<GroupItem>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AggregateFn {
    Count,
    Min,
    Max,
    Sum,
    Avg,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Projection {
    Var(String),
    Aggregate {
        function: AggregateFn,
        /// `None` for `COUNT(*)`.
        argument: Option<String>,
        alias: String,
    },
}

/// A parsed `SELECT` query.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectQuery {
    pub(crate) projections: Option<Vec<Projection>>,
    pub(crate) pattern: Vec<GroupItem>,
    pub(crate) group_by: Vec<String>,
    pub(crate) limit: Option<usize>,
}

impl SelectQuery {
    /// Names of the projected variables, in `SELECT` order.
    pub fn variables(&self) -> Vec<String> {
        match &self.projections {
            Some(p) => p
                .iter()
                .map(|p| match p {
                    Projection::Var(v) => v.clone(),
                    Projection::Aggregate { alias, .. } => alias.clone(),
                })
                .collect(),
            None => {
                let mut seen = Vec::new();
                collect_vars(&self.pattern, &mut seen);
                seen
            }
        }
    }
}

fn collect_vars(items: &[GroupItem], seen: &mut Vec<String>) {
    fn note(seen: &mut Vec<String>, v: &str) {
        if !seen.iter().any(|s| s == v) {
            seen.push(v.to_string());
        }
    }
    for item in items {
        match item {
            GroupItem::Triple(t) => {
                for term in [&t.subject, &t.predicate, &t.object] {
                    if let PatternTerm::Var(v) = term {
                        note(seen, v);
                    }
                }
            }
            GroupItem::Values { variables, .. } => {
                for v in variables {
                    note(seen, v);
                }
            }
            GroupItem::Optional(inner) => collect_vars(inner, seen),
        }
    }
}
