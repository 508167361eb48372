//! Finding joinable attributes for a column by sampling rows.
//!
//! A handful of rows is drawn, their cells resolved to entities, and every
//! property held by those entities is ranked by how many sampled rows have
//! it. The fraction of sampled rows with a property estimates how much of the
//! full column a join on it would fill.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph_store::{Datatype, EntityId, PropertyId, Value};
use crate::kg_client::{ClientError, KgClient};
use crate::planner::{allowed_aggregations, AggOp, Cardinality, HopPosition};
use crate::query_gen::{detail_template, discovery_template};
use crate::tabular::{ColumnType, Dataset};

pub const HISTOGRAM_BINS: usize = 10;
pub const TOP_CATEGORIES: usize = 10;
const EXAMPLE_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct DiscoveryConfig {
    pub sample_size: usize,
    pub top_k: usize,
    pub detail_sample: usize,
    /// Fixed seed for the row sample; a fresh one is drawn when unset.
    pub rng_seed: Option<u64>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            sample_size: 25,
            top_k: 50,
            detail_sample: 25,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeDescriptor {
    pub property: PropertyId,
    pub label: String,
    pub description: String,
    pub datatype: Datatype,
    pub unit: Option<String>,
    pub coverage: f64,
    /// Sampled rows holding the property.
    pub hits: usize,
    /// Rows in the sample, resolved or not.
    pub sample_count: usize,
    pub cardinality: Cardinality,
    pub examples: Vec<Value>,
    /// Labels for entity-valued examples and sample values.
    pub labels: BTreeMap<EntityId, String>,
    pub distribution_sample: Vec<Value>,
    /// Ops a single-hop plan on this property may use; entity-valued
    /// properties also offer `through`.
    pub allowed_aggregations: Vec<AggOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Histogram {
    /// Equal-width bins; `edges` has one more entry than `counts`. Datetimes
    /// are binned on epoch seconds.
    Numeric {
        edges: Vec<f64>,
        counts: Vec<usize>,
        total: usize,
    },
    /// The most frequent values, most frequent first; `other` counts the rest.
    Categorical {
        frequencies: Vec<(String, usize)>,
        other: usize,
        total: usize,
    },
}

impl Histogram {
    pub fn total(&self) -> usize {
        match self {
            Histogram::Numeric { total, .. } | Histogram::Categorical { total, .. } => *total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is not a string column")]
    NotAStringColumn(String),
    #[error("the dataset has no rows")]
    EmptyDataset,
    #[error("no sampled cell resolved to an entity")]
    AllCellsUnresolved,
    #[error("distribution sample is empty")]
    EmptySample,
    #[error("invalid counts: {hits} hits out of {n}")]
    BadCounts { hits: usize, n: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// `hits / n`, the estimated fraction of rows a join would fill.
pub fn estimate_coverage(hits: usize, n: usize) -> Result<f64, DiscoveryError> {
    if n == 0 || hits > n {
        return Err(DiscoveryError::BadCounts { hits, n });
    }
    Ok(hits as f64 / n as f64)
}

/// Distinct row indices drawn uniformly without replacement, ascending.
pub fn sample_rows(row_count: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = sample_size.min(row_count);
    let mut rows = rand::seq::index::sample(&mut rng, row_count, amount).into_vec();
    rows.sort_unstable();
    rows
}

struct PropertyStats {
    hits: usize,
    max_per_entity: usize,
}

/// Ranks the properties of a string column's entities by sampled coverage.
pub fn discover_related(
    client: &KgClient,
    dataset: &Dataset,
    column_name: &str,
    cfg: &DiscoveryConfig,
) -> Result<Vec<AttributeDescriptor>, DiscoveryError> {
    if cfg.sample_size == 0 || cfg.top_k == 0 {
        return Err(DiscoveryError::Config(
            "sample_size and top_k must be positive".into(),
        ));
    }
    let column = dataset
        .column(column_name)
        .map_err(|_| DiscoveryError::UnknownColumn(column_name.to_string()))?;
    if column.ctype != ColumnType::String {
        return Err(DiscoveryError::NotAStringColumn(column_name.to_string()));
    }
    if dataset.row_count == 0 {
        return Err(DiscoveryError::EmptyDataset);
    }

    let seed = cfg.rng_seed.unwrap_or_else(|| rand::rng().random());
    let rows = sample_rows(dataset.row_count, cfg.sample_size, seed);
    let cells: Vec<Option<String>> = rows.iter().map(|&r| column.text(r)).collect();
    let resolved = client.resolve_cells(&cells)?;

    let mut entities: Vec<EntityId> = Vec::new();
    for e in resolved.iter().flatten() {
        if !entities.contains(e) {
            entities.push(e.clone());
        }
    }
    if entities.is_empty() {
        return Err(DiscoveryError::AllCellsUnresolved);
    }

    let table = client.run_select_batched(&discovery_template(client.dialect()), &entities)?;
    let mut per_entity: HashMap<EntityId, HashMap<PropertyId, usize>> = HashMap::new();
    for row in &table.rows {
        let (Some(e), Some(p), Some(n)) = (
            row[0].as_ref().and_then(|t| t.as_entity()),
            row[1].as_ref().and_then(|t| t.as_property()),
            row[2]
                .as_ref()
                .and_then(|t| t.as_value())
                .and_then(Value::as_f64),
        ) else {
            continue;
        };
        *per_entity
            .entry(e.clone())
            .or_default()
            .entry(p.clone())
            .or_default() += n as usize;
    }

    // Counted per sampled row so duplicate cells weigh as often as they occur.
    let mut stats: BTreeMap<PropertyId, PropertyStats> = BTreeMap::new();
    for entity in resolved.iter().flatten() {
        for (p, &n) in per_entity.get(entity).into_iter().flatten() {
            let s = stats.entry(p.clone()).or_insert(PropertyStats {
                hits: 0,
                max_per_entity: 0,
            });
            s.hits += 1;
            s.max_per_entity = s.max_per_entity.max(n);
        }
    }
    let mut ranked: Vec<(PropertyId, PropertyStats)> = stats.into_iter().collect();
    // Stable sort keeps the BTreeMap's id order among ties.
    ranked.sort_by_key(|(_, st)| std::cmp::Reverse(st.hits));
    ranked.truncate(cfg.top_k);

    let ids: Vec<PropertyId> = ranked.iter().map(|(p, _)| p.clone()).collect();
    let metadata: HashMap<PropertyId, _> = client
        .properties(&ids)?
        .into_iter()
        .map(|m| (m.id.clone(), m))
        .collect();
    let samples = collect_samples(client, &entities, &ids, cfg.detail_sample)?;

    let mut entity_values: Vec<EntityId> = samples
        .values()
        .flatten()
        .filter_map(|v| v.as_entity().cloned())
        .collect();
    entity_values.sort();
    entity_values.dedup();
    let labels = client.entity_labels(&entity_values)?;

    ranked
        .into_iter()
        .map(|(property, s)| {
            let distribution_sample = samples.get(&property).cloned().unwrap_or_default();
            let meta = metadata.get(&property);
            let datatype = meta.map(|m| m.datatype).unwrap_or_else(|| {
                distribution_sample
                    .first()
                    .map_or(Datatype::String, Value::datatype)
            });
            let cardinality = if s.max_per_entity >= 2 {
                Cardinality::Many
            } else {
                Cardinality::One
            };
            let mut examples: Vec<Value> = Vec::new();
            for v in &distribution_sample {
                if examples.len() == EXAMPLE_COUNT {
                    break;
                }
                if !examples.contains(v) {
                    examples.push(v.clone());
                }
            }
            let mut allowed = allowed_aggregations(datatype, cardinality, HopPosition::Final);
            if datatype == Datatype::Entity {
                allowed.push(AggOp::Through);
            }
            let descriptor_labels = distribution_sample
                .iter()
                .filter_map(Value::as_entity)
                .filter_map(|e| labels.get(e).map(|l| (e.clone(), l.clone())))
                .collect();
            Ok(AttributeDescriptor {
                label: meta.map_or_else(|| property.to_string(), |m| m.label.clone()),
                description: meta.map(|m| m.description.clone()).unwrap_or_default(),
                unit: meta.and_then(|m| m.unit.clone()),
                coverage: estimate_coverage(s.hits, rows.len())?,
                hits: s.hits,
                sample_count: rows.len(),
                property,
                datatype,
                cardinality,
                examples,
                labels: descriptor_labels,
                distribution_sample,
                allowed_aggregations: allowed,
            })
        })
        .collect()
}

/// Up to `limit` values per property, taken entity by entity in sample order.
fn collect_samples(
    client: &KgClient,
    entities: &[EntityId],
    properties: &[PropertyId],
    limit: usize,
) -> Result<HashMap<PropertyId, Vec<Value>>, ClientError> {
    let mut out: HashMap<PropertyId, Vec<Value>> = HashMap::new();
    if properties.is_empty() || limit == 0 {
        return Ok(out);
    }
    let table =
        client.run_select_batched(&detail_template(properties, client.dialect()), entities)?;
    let mut by_entity: HashMap<&EntityId, Vec<(&PropertyId, &Value)>> = HashMap::new();
    for row in &table.rows {
        if let (Some(e), Some(p), Some(v)) = (
            row[0].as_ref().and_then(|t| t.as_entity()),
            row[1].as_ref().and_then(|t| t.as_property()),
            row[2].as_ref().and_then(|t| t.as_value()),
        ) {
            by_entity.entry(e).or_default().push((p, v));
        }
    }
    for e in entities {
        for &(p, v) in by_entity.get(e).into_iter().flatten() {
            let values = out.entry(p.clone()).or_default();
            if values.len() < limit {
                values.push(v.clone());
            }
        }
    }
    Ok(out)
}

/// Bins a descriptor's distribution sample: ten equal-width bins for
/// numbers and datetimes, the ten most frequent values otherwise.
pub fn attribute_histogram(desc: &AttributeDescriptor) -> Result<Histogram, DiscoveryError> {
    histogram_of(&desc.distribution_sample, desc.datatype, &desc.labels)
}

pub fn histogram_of(
    values: &[Value],
    datatype: Datatype,
    labels: &BTreeMap<EntityId, String>,
) -> Result<Histogram, DiscoveryError> {
    if values.is_empty() {
        return Err(DiscoveryError::EmptySample);
    }
    match datatype {
        Datatype::Number | Datatype::Datetime => {
            let xs: Vec<f64> = values
                .iter()
                .filter_map(|v| match v {
                    Value::Number(d) => Some(d.to_f64()),
                    Value::DateTime(t) => Some(t.epoch_seconds()),
                    _ => None,
                })
                .collect();
            if xs.is_empty() {
                return Err(DiscoveryError::EmptySample);
            }
            Ok(numeric_histogram(&xs))
        }
        Datatype::String | Datatype::Entity => {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for v in values {
                let key = match v {
                    Value::Entity(e) => labels.get(e).cloned().unwrap_or_else(|| e.to_string()),
                    other => other.to_string(),
                };
                *counts.entry(key).or_default() += 1;
            }
            let mut frequencies: Vec<(String, usize)> = counts.into_iter().collect();
            frequencies.sort_by_key(|(_, n)| std::cmp::Reverse(*n));
            let other = frequencies
                .iter()
                .skip(TOP_CATEGORIES)
                .map(|(_, n)| n)
                .sum();
            frequencies.truncate(TOP_CATEGORIES);
            Ok(Histogram::Categorical {
                frequencies,
                other,
                total: values.len(),
            })
        }
    }
}

fn numeric_histogram(xs: &[f64]) -> Histogram {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Histogram::Numeric {
            edges: vec![min, max],
            counts: vec![xs.len()],
            total: xs.len(),
        };
    }
    let width = (max - min) / HISTOGRAM_BINS as f64;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| {
            if i == HISTOGRAM_BINS {
                max
            } else {
                min + width * i as f64
            }
        })
        .collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &x in xs {
        // The top edge belongs to the last bin.
        let bin = (((x - min) / width).floor() as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    Histogram::Numeric {
        edges,
        counts,
        total: xs.len(),
    }
}
