use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

/// Identifier of a node in the graph, e.g. `Q42`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    /// Returns `None` for an empty (or all-whitespace) id.
    pub fn new(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            None
        } else {
            Some(EntityId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of an edge label, e.g. `P17`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropertyId(String);

impl PropertyId {
    pub fn new(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            None
        } else {
            Some(PropertyId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The kind of value a property points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Entity,
    Number,
    String,
    Datetime,
}

impl Datatype {
    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Entity => "entity",
            Datatype::Number => "number",
            Datatype::String => "string",
            Datatype::Datetime => "datetime",
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A finite decimal number kept in its textual form.
///
/// The text is what was read (from a fixture, CSV cell or endpoint) so that
/// writing it back out is lossless. Arithmetic goes through [`Decimal::to_f64`].
#[derive(Debug, Clone)]
pub struct Decimal {
    text: String,
    value: f64,
}

impl Decimal {
    pub fn parse(text: &str) -> Option<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return None;
        }
        // Rust accepts "inf", "NaN" and friends; none of those are decimals.
        if !trimmed
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
        {
            return None;
        }
        let value: f64 = trimmed.parse().ok()?;
        value.is_finite().then(|| Decimal {
            text: trimmed.to_string(),
            value,
        })
    }

    /// Returns `None` for NaN and infinities.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        // -0.0 prints as "-0"; normalise it away.
        let value = if value == 0.0 { 0.0 } else { value };
        Some(Decimal {
            text: format!("{value}"),
            value,
        })
    }

    pub fn to_f64(&self) -> f64 {
        self.value
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// An ISO-8601 timestamp (`2018-04-01T00:00:00Z`) or calendar date (`2018-04-01`).
#[derive(Debug, Clone)]
pub struct Timestamp {
    text: String,
    instant: DateTime<FixedOffset>,
}

impl Timestamp {
    pub fn parse(text: &str) -> Option<Self> {
        let trimmed = text.trim();
        let instant = DateTime::parse_from_rfc3339(trimmed).ok().or_else(|| {
            let date = NaiveDate::parse_from_str(trimmed, "%Y-%m-%d").ok()?;
            // parse_from_str tolerates missing zero padding; ISO-8601 does not.
            if trimmed.len() != 10 {
                return None;
            }
            Some(date.and_hms_opt(0, 0, 0)?.and_utc().fixed_offset())
        })?;
        Some(Timestamp {
            text: trimmed.to_string(),
            instant,
        })
    }

    pub fn instant(&self) -> DateTime<FixedOffset> {
        self.instant
    }

    /// Seconds since the Unix epoch, used for binning.
    pub fn epoch_seconds(&self) -> f64 {
        self.instant.timestamp() as f64 + f64::from(self.instant.timestamp_subsec_nanos()) * 1e-9
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.instant == other.instant
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// The object of a statement, or a cell in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Entity(EntityId),
    Number(Decimal),
    Text(String),
    DateTime(Timestamp),
}

impl Value {
    pub fn number(value: f64) -> Option<Value> {
        Decimal::from_f64(value).map(Value::Number)
    }

    pub fn entity(id: &str) -> Value {
        Value::Entity(EntityId(id.to_string()))
    }

    pub fn text(text: impl Into<String>) -> Value {
        Value::Text(text.into())
    }

    /// The datatype a property must have to hold this value.
    pub fn datatype(&self) -> Datatype {
        match self {
            Value::Entity(_) => Datatype::Entity,
            Value::Number(_) => Datatype::Number,
            Value::Text(_) => Datatype::String,
            Value::DateTime(_) => Datatype::Datetime,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(d) => Some(d.to_f64()),
            _ => None,
        }
    }

    pub fn as_entity(&self) -> Option<&EntityId> {
        match self {
            Value::Entity(id) => Some(id),
            _ => None,
        }
    }

    /// Ordering between values of the same kind: numbers by value, datetimes
    /// chronologically, text and entity ids lexicographically. Values of
    /// different kinds are ordered by kind.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => a.to_f64().total_cmp(&b.to_f64()),
            (Value::DateTime(a), Value::DateTime(b)) => a.instant().cmp(&b.instant()),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Entity(a), Value::Entity(b)) => a.cmp(b),
            _ => self.datatype().cmp(&other.datatype()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity(id) => write!(f, "{id}"),
            Value::Number(d) => write!(f, "{d}"),
            Value::Text(s) => f.write_str(s),
            Value::DateTime(t) => write!(f, "{t}"),
        }
    }
}

/// Numbers serialise as JSON numbers; everything else as its text.
impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(d) => serializer.serialize_f64(d.to_f64()),
            Value::Entity(id) => serializer.serialize_str(id.as_str()),
            Value::Text(s) => serializer.serialize_str(s),
            Value::DateTime(t) => serializer.serialize_str(t.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMeta {
    pub id: EntityId,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMeta {
    pub id: PropertyId,
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub datatype: Datatype,
    #[serde(default)]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub subject: EntityId,
    pub property: PropertyId,
    pub value: Value,
}

/// In-memory entity/statement store.
///
/// Built once (see [`crate::graph_store::load_fixture`] or [`GraphBuilder`])
/// and immutable afterwards. Every iteration order exposed here is insertion
/// order.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub(crate) entities: Vec<EntityMeta>,
    pub(crate) entity_index: HashMap<EntityId, usize>,
    pub(crate) properties: Vec<PropertyMeta>,
    pub(crate) property_index: HashMap<PropertyId, usize>,
    /// Per entity (by position in `entities`): its statements in insertion order.
    pub(crate) outgoing: Vec<Vec<(PropertyId, Value)>>,
    pub(crate) statement_count: usize,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn property_count(&self) -> usize {
        self.properties.len()
    }

    pub fn statement_count(&self) -> usize {
        self.statement_count
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityMeta> {
        self.entities.iter()
    }

    pub fn properties(&self) -> impl Iterator<Item = &PropertyMeta> {
        self.properties.iter()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&EntityMeta> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    pub fn property(&self, id: &PropertyId) -> Option<&PropertyMeta> {
        self.property_index.get(id).map(|&i| &self.properties[i])
    }

    /// All statements, grouped by subject in entity order, each group in
    /// insertion order.
    pub fn statements(&self) -> impl Iterator<Item = Statement> + '_ {
        self.entities
            .iter()
            .zip(&self.outgoing)
            .flat_map(|(meta, out)| {
                out.iter().map(move |(p, v)| Statement {
                    subject: meta.id.clone(),
                    property: p.clone(),
                    value: v.clone(),
                })
            })
    }

    pub(crate) fn outgoing_of(&self, id: &EntityId) -> Option<&[(PropertyId, Value)]> {
        self.entity_index
            .get(id)
            .map(|&i| self.outgoing[i].as_slice())
    }
}

/// Incremental construction of a [`KnowledgeGraph`] with invariant checks.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
}

/// Why a record could not be added to a graph under construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("duplicate entity {0}")]
    DuplicateEntity(EntityId),
    #[error("duplicate property {0}")]
    DuplicateProperty(PropertyId),
    #[error("statement references undeclared entity {0}")]
    UnknownEntity(EntityId),
    #[error("statement references undeclared property {0}")]
    UnknownProperty(PropertyId),
    #[error("property {property} has datatype {expected} but the value is a {found}")]
    DatatypeMismatch {
        property: PropertyId,
        expected: Datatype,
        found: Datatype,
    },
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, meta: EntityMeta) -> Result<&mut Self, BuildError> {
        if self.graph.entity_index.contains_key(&meta.id) {
            return Err(BuildError::DuplicateEntity(meta.id));
        }
        self.graph
            .entity_index
            .insert(meta.id.clone(), self.graph.entities.len());
        self.graph.entities.push(meta);
        self.graph.outgoing.push(Vec::new());
        Ok(self)
    }

    pub fn property(&mut self, meta: PropertyMeta) -> Result<&mut Self, BuildError> {
        if self.graph.property_index.contains_key(&meta.id) {
            return Err(BuildError::DuplicateProperty(meta.id));
        }
        self.graph
            .property_index
            .insert(meta.id.clone(), self.graph.properties.len());
        self.graph.properties.push(meta);
        Ok(self)
    }

    /// Statements may reference entities declared later only through
    /// [`GraphBuilder::statement_deferred`]; this method requires every
    /// reference to be declared already.
    pub fn statement(&mut self, statement: Statement) -> Result<&mut Self, BuildError> {
        self.check_statement(&statement)?;
        if let Value::Entity(target) = &statement.value {
            if !self.graph.entity_index.contains_key(target) {
                return Err(BuildError::UnknownEntity(target.clone()));
            }
        }
        self.push(statement);
        Ok(self)
    }

    fn check_statement(&self, statement: &Statement) -> Result<(), BuildError> {
        if !self.graph.entity_index.contains_key(&statement.subject) {
            return Err(BuildError::UnknownEntity(statement.subject.clone()));
        }
        let meta = self
            .graph
            .property(&statement.property)
            .ok_or_else(|| BuildError::UnknownProperty(statement.property.clone()))?;
        let found = statement.value.datatype();
        if found != meta.datatype {
            return Err(BuildError::DatatypeMismatch {
                property: statement.property.clone(),
                expected: meta.datatype,
                found,
            });
        }
        Ok(())
    }

    /// Adds a statement whose entity-valued object may be declared later.
    /// [`GraphBuilder::finish`] rejects the graph if it never is.
    pub fn statement_deferred(&mut self, statement: Statement) -> Result<&mut Self, BuildError> {
        self.check_statement(&statement)?;
        self.push(statement);
        Ok(self)
    }

    /// Statements form a set: an exact repeat of an existing triple is dropped.
    fn push(&mut self, statement: Statement) {
        let i = self.graph.entity_index[&statement.subject];
        let out = &mut self.graph.outgoing[i];
        if out
            .iter()
            .any(|(p, v)| *p == statement.property && *v == statement.value)
        {
            return;
        }
        out.push((statement.property, statement.value));
        self.graph.statement_count += 1;
    }

    pub fn finish(self) -> Result<KnowledgeGraph, BuildError> {
        for out in &self.graph.outgoing {
            for (_, value) in out {
                if let Value::Entity(target) = value {
                    if !self.graph.entity_index.contains_key(target) {
                        return Err(BuildError::UnknownEntity(target.clone()));
                    }
                }
            }
        }
        Ok(self.graph)
    }
}
