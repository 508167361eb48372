//! Line-delimited JSON fixture format.
//!
//! ```text
//! {"kind":"entity","id":"Q1","label":"Atlantis","aliases":["ATL"],"description":"island nation"}
//! {"kind":"property","id":"P1","label":"population","datatype":"number","unit":null,"description":"..."}
//! {"kind":"statement","subject":"Q1","property":"P1","value":{"number":100}}
//! ```
//!
//! Records may appear in any order; statements are kept in the order they
//! appear in the file.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::model::{
    BuildError, Datatype, Decimal, EntityId, EntityMeta, GraphBuilder, KnowledgeGraph, PropertyId,
    PropertyMeta, Statement, Timestamp, Value,
};

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Reference {
        line: usize,
        #[source]
        source: BuildError,
    },
    #[error("reading fixture: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Entity {
        id: String,
        label: String,
        #[serde(default)]
        aliases: Vec<String>,
        #[serde(default)]
        description: String,
    },
    Property {
        id: String,
        label: String,
        datatype: Datatype,
        #[serde(default)]
        unit: Option<String>,
        #[serde(default)]
        description: String,
    },
    Statement {
        subject: String,
        property: String,
        value: ValueRecord,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum ValueRecord {
    Number(serde_json::Number),
    String(String),
    Datetime(String),
    Entity(String),
}

impl ValueRecord {
    fn into_value(self) -> Result<Value, String> {
        match self {
            ValueRecord::Number(n) => Decimal::parse(&n.to_string())
                .map(Value::Number)
                .ok_or_else(|| format!("number {n} is not finite")),
            ValueRecord::String(s) => Ok(Value::Text(s)),
            ValueRecord::Datetime(s) => Timestamp::parse(&s)
                .map(Value::DateTime)
                .ok_or_else(|| format!("{s:?} is not an ISO-8601 timestamp")),
            ValueRecord::Entity(id) => EntityId::new(id)
                .map(Value::Entity)
                .ok_or_else(|| "empty entity id".to_string()),
        }
    }

    fn from_value(value: &Value) -> Self {
        match value {
            Value::Number(d) => {
                ValueRecord::Number(serde_json::from_str(d.as_str()).unwrap_or_else(|_| {
                    serde_json::Number::from_f64(d.to_f64()).expect("decimals are finite")
                }))
            }
            Value::Text(s) => ValueRecord::String(s.clone()),
            Value::DateTime(t) => ValueRecord::Datetime(t.as_str().to_string()),
            Value::Entity(id) => ValueRecord::Entity(id.as_str().to_string()),
        }
    }
}

/// Reads a fixture. Blank lines are skipped.
pub fn load_fixture<R: BufRead>(source: R) -> Result<KnowledgeGraph, FixtureError> {
    let mut entities = Vec::new();
    let mut properties = Vec::new();
    let mut statements = Vec::new();

    for (index, line) in source.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| FixtureError::Parse {
            line: line_no,
            reason,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match record {
            Record::Entity {
                id,
                label,
                aliases,
                description,
            } => {
                let id = EntityId::new(id).ok_or_else(|| parse_err("empty entity id".into()))?;
                entities.push((
                    line_no,
                    EntityMeta {
                        id,
                        label,
                        aliases,
                        description,
                    },
                ));
            }
            Record::Property {
                id,
                label,
                datatype,
                unit,
                description,
            } => {
                let id =
                    PropertyId::new(id).ok_or_else(|| parse_err("empty property id".into()))?;
                properties.push((
                    line_no,
                    PropertyMeta {
                        id,
                        label,
                        description,
                        datatype,
                        unit,
                    },
                ));
            }
            Record::Statement {
                subject,
                property,
                value,
            } => {
                let subject =
                    EntityId::new(subject).ok_or_else(|| parse_err("empty subject".into()))?;
                let property =
                    PropertyId::new(property).ok_or_else(|| parse_err("empty property".into()))?;
                let value = value.into_value().map_err(parse_err)?;
                statements.push((
                    line_no,
                    Statement {
                        subject,
                        property,
                        value,
                    },
                ));
            }
        }
    }

    let mut builder = GraphBuilder::new();
    for (line, meta) in entities {
        builder
            .entity(meta)
            .map_err(|source| FixtureError::Reference { line, source })?;
    }
    for (line, meta) in properties {
        builder
            .property(meta)
            .map_err(|source| FixtureError::Reference { line, source })?;
    }
    for (line, statement) in statements {
        builder
            .statement(statement)
            .map_err(|source| FixtureError::Reference { line, source })?;
    }
    // Every reference was checked above against the full set of declarations.
    Ok(builder.finish().expect("references already validated"))
}

/// Writes `graph` in normalised record order: entities, then properties,
/// then statements.
pub fn write_fixture<W: Write>(graph: &KnowledgeGraph, mut out: W) -> std::io::Result<()> {
    let mut emit = |record: &Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")
    };
    for e in graph.entities() {
        emit(&Record::Entity {
            id: e.id.as_str().to_string(),
            label: e.label.clone(),
            aliases: e.aliases.clone(),
            description: e.description.clone(),
        })?;
    }
    for p in graph.properties() {
        emit(&Record::Property {
            id: p.id.as_str().to_string(),
            label: p.label.clone(),
            datatype: p.datatype,
            unit: p.unit.clone(),
            description: p.description.clone(),
        })?;
    }
    for s in graph.statements() {
        emit(&Record::Statement {
            subject: s.subject.as_str().to_string(),
            property: s.property.as_str().to_string(),
            value: ValueRecord::from_value(&s.value),
        })?;
    }
    Ok(())
}
