//! Datasets with typed columns, CSV ingestion and export, and provenance for
//! augmented columns.
//!
//! A [`Dataset`] is an immutable snapshot: every mutating operation returns a
//! new dataset with a bumped version.

use serde::{Deserialize, Serialize};

use crate::graph_store::{Datatype, Decimal, EntityId, Timestamp, Value};
use crate::planner::JoinPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Number,
    Datetime,
}

impl ColumnType {
    /// The column type that stores values of `datatype`. Entities are stored
    /// by label.
    pub fn for_datatype(datatype: Datatype) -> ColumnType {
        match datatype {
            Datatype::Number => ColumnType::Number,
            Datatype::Datetime => ColumnType::Datetime,
            Datatype::String | Datatype::Entity => ColumnType::String,
        }
    }

    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ColumnType::String, Value::Text(_))
                | (ColumnType::Number, Value::Number(_))
                | (ColumnType::Datetime, Value::DateTime(_))
        )
    }
}

/// Where an augmented column came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plan: JoinPlan,
    pub parent_column: String,
    /// Unit of the final property, when the graph records one.
    #[serde(default)]
    pub unit: Option<String>,
    /// Set when the joined values carried more than one unit.
    #[serde(default)]
    pub mixed_units: bool,
    /// Per row, the entity behind a label-rendered value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_ids: Option<Vec<Option<EntityId>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub ctype: ColumnType,
    pub cells: Vec<Option<Value>>,
    pub provenance: Option<Provenance>,
    pub enabled: bool,
}

impl Column {
    pub fn is_augmented(&self) -> bool {
        self.provenance.is_some()
    }

    /// The cell as CSV text; `None` for null.
    pub fn text(&self, row: usize) -> Option<String> {
        self.cells[row].as_ref().map(ToString::to_string)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TabularError {
    #[error("CSV error at row {row}: {reason}")]
    CsvError { row: u64, reason: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRows {
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("row {row} holds a value that is not {ctype:?}")]
    CellTypeMismatch { row: usize, ctype: ColumnType },
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub id: String,
    pub version: u64,
    pub row_count: usize,
    pub columns: Vec<Column>,
}

/// The sidecar listing augmented columns in creation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub columns: Vec<SidecarEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub name: String,
    pub enabled: bool,
    pub parent_column: String,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub mixed_units: bool,
    pub plan: JoinPlan,
}

fn infer_type(cells: &[&str]) -> ColumnType {
    let filled: Vec<&str> = cells.iter().copied().filter(|c| !c.is_empty()).collect();
    if filled.is_empty() {
        ColumnType::String
    } else if filled.iter().all(|c| Decimal::parse(c).is_some()) {
        ColumnType::Number
    } else if filled.iter().all(|c| Timestamp::parse(c).is_some()) {
        ColumnType::Datetime
    } else {
        ColumnType::String
    }
}

fn parse_cell(ctype: ColumnType, text: &str) -> Option<Value> {
    if text.is_empty() {
        return None;
    }
    Some(match ctype {
        ColumnType::String => Value::Text(text.to_string()),
        ColumnType::Number => Value::Number(Decimal::parse(text).expect("inferred as number")),
        ColumnType::Datetime => {
            Value::DateTime(Timestamp::parse(text).expect("inferred as datetime"))
        }
    })
}

fn csv_error(e: &csv::Error) -> TabularError {
    let row = e.position().map_or(0, |p| p.line());
    if let csv::ErrorKind::UnequalLengths {
        pos,
        expected_len,
        len,
    } = e.kind()
    {
        return TabularError::RaggedRows {
            row: pos.as_ref().map_or(row, |p| p.line()),
            expected: *expected_len as usize,
            found: *len as usize,
        };
    }
    TabularError::CsvError {
        row,
        reason: e.to_string(),
    }
}

/// Parses UTF-8 CSV into a dataset, inferring a type per column: number if
/// every non-empty cell is a decimal, datetime if every non-empty cell is
/// ISO-8601, string otherwise. Empty cells are null.
pub fn import_csv(bytes: &[u8], options: CsvOptions) -> Result<Dataset, TabularError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(options.delimiter)
        .flexible(false)
        .from_reader(bytes);
    let mut records = reader.records();
    let mut names: Vec<String> = Vec::new();
    if options.has_header {
        match records.next() {
            Some(header) => {
                let header = header.map_err(|e| csv_error(&e))?;
                names = header
                    .iter()
                    .enumerate()
                    .map(|(i, n)| {
                        if n.is_empty() {
                            format!("col_{i}")
                        } else {
                            n.to_string()
                        }
                    })
                    .collect();
            }
            None => {
                return Err(TabularError::CsvError {
                    row: 1,
                    reason: "missing header row".into(),
                })
            }
        }
    }
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in records {
        rows.push(record.map_err(|e| csv_error(&e))?);
    }
    if !options.has_header {
        let width = rows.first().map_or(0, csv::StringRecord::len);
        names = (0..width).map(|i| format!("col_{i}")).collect();
    }
    if names.is_empty() {
        return Err(TabularError::CsvError {
            row: 1,
            reason: "no columns".into(),
        });
    }
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(TabularError::CsvError {
                row: 1,
                reason: format!("duplicate column name {name:?}"),
            });
        }
    }

    let columns = names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let texts: Vec<&str> = rows.iter().map(|r| &r[c]).collect();
            let ctype = infer_type(&texts);
            Column {
                name,
                ctype,
                cells: texts.iter().map(|t| parse_cell(ctype, t)).collect(),
                provenance: None,
                enabled: true,
            }
        })
        .collect();
    Ok(Dataset {
        id: uuid::Uuid::new_v4().to_string(),
        version: 0,
        row_count: rows.len(),
        columns,
    })
}

/// Writes enabled columns as RFC 4180 CSV with `\n` line endings.
pub fn export_csv(dataset: &Dataset) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let enabled: Vec<&Column> = dataset.enabled_columns().collect();
    if enabled.is_empty() {
        return Vec::new();
    }
    let write = |w: &mut csv::Writer<Vec<u8>>, fields: Vec<String>| {
        w.write_record(&fields).expect("writing to memory");
    };
    write(
        &mut writer,
        enabled.iter().map(|c| c.name.clone()).collect(),
    );
    for row in 0..dataset.row_count {
        write(
            &mut writer,
            enabled
                .iter()
                .map(|c| c.text(row).unwrap_or_default())
                .collect(),
        );
    }
    writer.into_inner().expect("writing to memory")
}

impl Dataset {
    pub fn column(&self, name: &str) -> Result<&Column, TabularError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| TabularError::UnknownColumn(name.to_string()))
    }

    pub fn enabled_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.enabled)
    }

    fn next_version(&self) -> Dataset {
        let mut next = self.clone();
        next.version += 1;
        next
    }

    /// `name`, or `name (2)`, `name (3)`, … whichever is free first.
    pub fn unique_name(&self, name: &str) -> String {
        let taken = |n: &str| self.columns.iter().any(|c| c.name == n);
        if !taken(name) {
            return name.to_string();
        }
        (2..)
            .map(|i| format!("{name} ({i})"))
            .find(|n| !taken(n))
            .expect("unbounded suffixes")
    }

    /// Appends an enabled column produced by `provenance.plan`.
    pub fn add_augmented_column(
        &self,
        name: &str,
        values: Vec<Option<Value>>,
        ctype: ColumnType,
        provenance: Provenance,
    ) -> Result<Dataset, TabularError> {
        if values.len() != self.row_count {
            return Err(TabularError::LengthMismatch {
                expected: self.row_count,
                found: values.len(),
            });
        }
        if let Some(row) = values
            .iter()
            .position(|v| v.as_ref().is_some_and(|v| !ctype.admits(v)))
        {
            return Err(TabularError::CellTypeMismatch { row, ctype });
        }
        self.column(&provenance.parent_column)?;
        let mut next = self.next_version();
        next.columns.push(Column {
            name: self.unique_name(name),
            ctype,
            cells: values,
            provenance: Some(provenance),
            enabled: true,
        });
        Ok(next)
    }

    /// Hides or restores a column. Cells are kept either way.
    pub fn set_enabled(&self, name: &str, enabled: bool) -> Result<Dataset, TabularError> {
        self.column(name)?;
        let mut next = self.next_version();
        for c in next.columns.iter_mut().filter(|c| c.name == name) {
            c.enabled = enabled;
        }
        Ok(next)
    }

    /// The first `min(n, row_count)` rows of the enabled columns.
    pub fn head(&self, n: usize) -> Dataset {
        let rows = n.min(self.row_count);
        Dataset {
            id: self.id.clone(),
            version: self.version,
            row_count: rows,
            columns: self
                .enabled_columns()
                .map(|c| Column {
                    cells: c.cells[..rows].to_vec(),
                    provenance: c.provenance.as_ref().map(|p| Provenance {
                        entity_ids: p.entity_ids.as_ref().map(|ids| ids[..rows].to_vec()),
                        ..p.clone()
                    }),
                    ..c.clone()
                })
                .collect(),
        }
    }

    /// Augmented columns with their plans, in creation order.
    pub fn plan_sidecar(&self) -> PlanSidecar {
        PlanSidecar {
            columns: self
                .columns
                .iter()
                .filter_map(|c| {
                    let p = c.provenance.as_ref()?;
                    Some(SidecarEntry {
                        name: c.name.clone(),
                        enabled: c.enabled,
                        parent_column: p.parent_column.clone(),
                        unit: p.unit.clone(),
                        mixed_units: p.mixed_units,
                        plan: p.plan.clone(),
                    })
                })
                .collect(),
        }
    }
}

/// File name of the plan sidecar for an exported CSV, `<name>.plan.json`.
pub fn sidecar_path(csv_path: &std::path::Path) -> std::path::PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "export".into());
    csv_path.with_file_name(format!("{stem}.plan.json"))
}
