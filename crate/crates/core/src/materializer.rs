//! Evaluating join plans: aggregation, multi-hop folding, previews, full
//! columns and example neighbourhoods.
//!
//! Raw paths come back from the graph as `(?e, ?x1, …, ?xk)` rows. They are
//! regrouped into one [`ValueTree`] per source entity and folded inner-first:
//! the final hop's op runs over each innermost leaf list, then every through
//! hop combines its children's results with its own op.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph_store::{BindingTable, Datatype, EntityId, PropertyId, PropertyMeta, Value};
use crate::kg_client::{ClientError, KgClient};
use crate::planner::{self, AggOp, JoinPlan, PlanError, DEFAULT_MAX_DEPTH};
use crate::query_gen::{self, QueryGenError};
use crate::tabular::{ColumnType, Dataset, Provenance, TabularError};

/// Rows covered by a preview.
pub const PREVIEW_ROWS: usize = 10;
/// Branches and leaves kept per level in an example subgraph.
pub const SUBGRAPH_FANOUT: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("{op} is not defined for {datatype} values")]
    IllegalOp { op: AggOp, datatype: Datatype },
    #[error("value expects a single element, found {count}")]
    MultiplicityViolation { count: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaterializeError {
    #[error("invalid plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanError>),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("value tree does not match the plan depth")]
    ShapeMismatch,
    #[error("row {row} does not resolve to an entity")]
    RowUnresolvable { row: usize },
    #[error("row {row} is out of range (dataset has {row_count} rows)")]
    RowOutOfRange { row: usize, row_count: usize },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

impl From<QueryGenError> for MaterializeError {
    fn from(e: QueryGenError) -> Self {
        match e {
            QueryGenError::InvalidPlan(errors) => MaterializeError::InvalidPlan(errors),
            QueryGenError::EmptyEntitySet => {
                unreachable!("callers skip queries for empty entity sets")
            }
        }
    }
}

/// Index into `0..n` chosen uniformly by a generator seeded with `seed`.
pub fn sample_index(seed: u64, n: usize) -> usize {
    assert!(n > 0, "cannot sample from an empty list");
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Seed for one node of a value tree: the plan seed mixed with the entity
/// path from the root (FNV-1a). Rows reaching the same node draw the same
/// sample, so previews and full joins agree.
pub fn node_seed(plan_seed: u64, path: &[&EntityId]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&plan_seed.to_le_bytes());
    for id in path {
        eat(id.as_str().as_bytes());
        eat(&[0xff]);
    }
    h
}

fn numbers(values: &[Value], op: AggOp) -> Result<Vec<f64>, AggregateError> {
    values
        .iter()
        .map(|v| {
            v.as_f64().ok_or(AggregateError::IllegalOp {
                op,
                datatype: v.datatype(),
            })
        })
        .collect()
}

/// Applies one aggregation. `count` is always a number (0 for an empty
/// list); every other op yields `None` on an empty list.
pub fn aggregate(values: &[Value], op: AggOp, seed: u64) -> Result<Option<Value>, AggregateError> {
    if op == AggOp::Through {
        return Err(AggregateError::IllegalOp {
            op,
            datatype: values.first().map_or(Datatype::Entity, Value::datatype),
        });
    }
    if op == AggOp::Count {
        return Ok(Value::number(values.len() as f64));
    }
    let Some(first) = values.first() else {
        return Ok(None);
    };
    let datatype = first.datatype();
    if let Some(odd) = values.iter().find(|v| v.datatype() != datatype) {
        return Err(AggregateError::IllegalOp {
            op,
            datatype: odd.datatype(),
        });
    }
    let n = values.len() as f64;
    Ok(match op {
        AggOp::Mean => Value::number(numbers(values, op)?.iter().sum::<f64>() / n),
        AggOp::Sum => Value::number(numbers(values, op)?.iter().sum::<f64>()),
        AggOp::Variance => {
            // Centred on the first value so a constant list gives exactly 0.
            let xs = numbers(values, op)?;
            let shift = xs[0];
            let mean = xs.iter().map(|x| x - shift).sum::<f64>() / n;
            Value::number(xs.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / n)
        }
        AggOp::Max | AggOp::Min => {
            if !matches!(datatype, Datatype::Number | Datatype::Datetime) {
                return Err(AggregateError::IllegalOp { op, datatype });
            }
            let pick = values.iter().reduce(|best, v| {
                let better = if op == AggOp::Max {
                    v.total_cmp(best).is_gt()
                } else {
                    v.total_cmp(best).is_lt()
                };
                if better {
                    v
                } else {
                    best
                }
            });
            pick.cloned()
        }
        AggOp::Sample => Some(values[sample_index(seed, values.len())].clone()),
        AggOp::Value => {
            if values.len() > 1 {
                return Err(AggregateError::MultiplicityViolation {
                    count: values.len(),
                });
            }
            Some(first.clone())
        }
        AggOp::Count | AggOp::Through => unreachable!("handled above"),
    })
}

/// The neighbourhood of one source entity along a plan's hops.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueTree {
    /// Values of the final hop's property.
    Leaves(Vec<Value>),
    /// Entities reached by a through hop, in first-seen order.
    Branches(Vec<(EntityId, ValueTree)>),
}

impl ValueTree {
    fn empty(levels: usize) -> ValueTree {
        if levels <= 1 {
            ValueTree::Leaves(Vec::new())
        } else {
            ValueTree::Branches(Vec::new())
        }
    }

    fn insert(&mut self, path: &[&Value]) {
        match (self, path) {
            (ValueTree::Leaves(values), [leaf]) => values.push((*leaf).clone()),
            (ValueTree::Branches(children), [Value::Entity(child), rest @ ..]) => {
                let i = match children.iter().position(|(id, _)| id == child) {
                    Some(i) => i,
                    None => {
                        children.push((child.clone(), ValueTree::empty(rest.len())));
                        children.len() - 1
                    }
                };
                children[i].1.insert(rest);
            }
            // Non-entity intermediates cannot be followed; drop the path.
            _ => {}
        }
    }

    /// Keeps the first `n` children and leaves at every level.
    pub fn truncated(&self, n: usize) -> ValueTree {
        match self {
            ValueTree::Leaves(values) => {
                ValueTree::Leaves(values.iter().take(n).cloned().collect())
            }
            ValueTree::Branches(children) => ValueTree::Branches(
                children
                    .iter()
                    .take(n)
                    .map(|(id, t)| (id.clone(), t.truncated(n)))
                    .collect(),
            ),
        }
    }
}

/// Regroups value-fetch rows `(?e, ?x1, …, ?xk)` into one tree per source
/// entity. Every entity in `roots` gets a tree, empty if it has no rows.
pub fn build_trees(
    table: &BindingTable,
    roots: &[EntityId],
    depth: usize,
) -> HashMap<EntityId, ValueTree> {
    let mut trees: HashMap<EntityId, ValueTree> = roots
        .iter()
        .map(|e| (e.clone(), ValueTree::empty(depth)))
        .collect();
    for row in &table.rows {
        let path: Option<Vec<&Value>> = row
            .iter()
            .take(depth + 1)
            .map(|t| t.as_ref().and_then(|t| t.as_value()))
            .collect();
        let Some(path) = path.filter(|p| p.len() == depth + 1) else {
            continue;
        };
        let Value::Entity(root) = path[0] else {
            continue;
        };
        trees
            .entry(root.clone())
            .or_insert_with(|| ValueTree::empty(depth))
            .insert(&path[1..]);
    }
    trees
}

/// Folds a tree inner-first with the plan's per-level ops. Null child
/// results are dropped before a through level combines them.
pub fn fold_tree(
    tree: &ValueTree,
    plan: &JoinPlan,
    root: &EntityId,
) -> Result<Option<Value>, MaterializeError> {
    let seed = plan.rng_seed.unwrap_or(0);
    let ops = plan.level_ops();
    let mut path = vec![root];
    fold_level(tree, &ops, 0, seed, &mut path)
}

fn fold_level<'t>(
    tree: &'t ValueTree,
    ops: &[AggOp],
    level: usize,
    seed: u64,
    path: &mut Vec<&'t EntityId>,
) -> Result<Option<Value>, MaterializeError> {
    let last = ops
        .len()
        .checked_sub(1)
        .ok_or(MaterializeError::ShapeMismatch)?;
    match tree {
        ValueTree::Leaves(values) if level == last => {
            Ok(aggregate(values, ops[level], node_seed(seed, path))?)
        }
        ValueTree::Branches(children) if level < last => {
            let mut results = Vec::with_capacity(children.len());
            for (child, subtree) in children {
                path.push(child);
                let r = fold_level(subtree, ops, level + 1, seed, path);
                path.pop();
                results.extend(r?);
            }
            Ok(aggregate(&results, ops[level], node_seed(seed, path))?)
        }
        _ => Err(MaterializeError::ShapeMismatch),
    }
}

/// Property metadata for the plan's hops, fetched once.
fn plan_metadata(
    client: &KgClient,
    plan: &JoinPlan,
) -> Result<HashMap<PropertyId, PropertyMeta>, ClientError> {
    let mut ids: Vec<PropertyId> = plan.hops.iter().map(|h| h.property.clone()).collect();
    ids.sort();
    ids.dedup();
    Ok(client
        .properties(&ids)?
        .into_iter()
        .map(|m| (m.id.clone(), m))
        .collect())
}

/// Validates `plan` against the graph's metadata and the dataset.
fn check_plan(
    plan: &JoinPlan,
    metadata: &HashMap<PropertyId, PropertyMeta>,
    dataset: &Dataset,
) -> Result<Datatype, MaterializeError> {
    let mut errors = match planner::validate(plan, metadata, DEFAULT_MAX_DEPTH) {
        Ok(()) => Vec::new(),
        Err(errors) => errors,
    };
    match dataset.column(&plan.source_column) {
        Err(_) => errors.push(PlanError {
            hop_index: None,
            reason: format!("unknown source column {:?}", plan.source_column),
        }),
        Ok(c) if c.ctype != ColumnType::String => errors.push(PlanError {
            hop_index: None,
            reason: format!(
                "source column {:?} is not a string column",
                plan.source_column
            ),
        }),
        Ok(_) => {}
    }
    if !errors.is_empty() {
        return Err(MaterializeError::InvalidPlan(errors));
    }
    Ok(plan
        .result_datatype(metadata)
        .expect("validated plans have a result type"))
}

struct Evaluation {
    values: Vec<Option<Value>>,
    entity_ids: Vec<Option<EntityId>>,
}

/// Resolves the source cells of `rows`, fetches paths for the distinct
/// entities and folds one result per entity.
fn evaluate(
    client: &KgClient,
    dataset: &Dataset,
    plan: &JoinPlan,
    metadata: &HashMap<PropertyId, PropertyMeta>,
    result_type: Datatype,
    rows: usize,
) -> Result<Evaluation, MaterializeError> {
    let column = dataset.column(&plan.source_column)?;
    let cells: Vec<Option<String>> = (0..rows).map(|r| column.text(r)).collect();
    let resolved = client.resolve_cells(&cells)?;

    let mut distinct: Vec<EntityId> = Vec::new();
    let mut seen = BTreeSet::new();
    for e in resolved.iter().flatten() {
        if seen.insert(e) {
            distinct.push(e.clone());
        }
    }
    let mut results: HashMap<EntityId, Option<Value>> = HashMap::new();
    if !distinct.is_empty() {
        let template = query_gen::values_fetch_template(plan, metadata, client.dialect())?;
        let table = client.run_select_batched(&template, &distinct)?;
        let trees = build_trees(&table, &distinct, plan.depth());
        for e in &distinct {
            results.insert(e.clone(), fold_tree(&trees[e], plan, e)?);
        }
    }

    let per_row: Vec<Option<Value>> = resolved
        .iter()
        .map(|e| e.as_ref().and_then(|e| results[e].clone()))
        .collect();
    if result_type != Datatype::Entity {
        return Ok(Evaluation {
            values: per_row,
            entity_ids: vec![None; rows],
        });
    }
    let ids: Vec<Option<EntityId>> = per_row
        .iter()
        .map(|v| v.as_ref().and_then(Value::as_entity).cloned())
        .collect();
    let mut wanted: Vec<EntityId> = ids.iter().flatten().cloned().collect();
    wanted.sort();
    wanted.dedup();
    let labels = client.entity_labels(&wanted)?;
    Ok(Evaluation {
        values: ids
            .iter()
            .map(|id| {
                id.as_ref().map(|id| {
                    Value::Text(labels.get(id).cloned().unwrap_or_else(|| id.to_string()))
                })
            })
            .collect(),
        entity_ids: ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinPreview {
    /// Row indices covered, `0..min(10, row_count)`.
    pub rows: Vec<usize>,
    pub values: Vec<Option<Value>>,
    pub plan: JoinPlan,
    pub null_count: usize,
    pub ctype: ColumnType,
}

/// Joins the first ten rows only. Nothing is written to the dataset.
pub fn preview_join(
    client: &KgClient,
    dataset: &Dataset,
    plan: &JoinPlan,
) -> Result<JoinPreview, MaterializeError> {
    let metadata = plan_metadata(client, plan)?;
    let plan = plan.clone().with_default_name(&metadata);
    let result_type = check_plan(&plan, &metadata, dataset)?;
    let rows = PREVIEW_ROWS.min(dataset.row_count);
    let eval = evaluate(client, dataset, &plan, &metadata, result_type, rows)?;
    Ok(JoinPreview {
        rows: (0..rows).collect(),
        null_count: eval.values.iter().filter(|v| v.is_none()).count(),
        values: eval.values,
        ctype: ColumnType::for_datatype(result_type),
        plan,
    })
}

/// Joins every row and returns a new dataset version with the column
/// appended. On any error the input dataset is left as it was.
pub fn materialize(
    client: &KgClient,
    dataset: &Dataset,
    plan: &JoinPlan,
) -> Result<Dataset, MaterializeError> {
    let metadata = plan_metadata(client, plan)?;
    let plan = plan.clone().with_default_name(&metadata);
    let result_type = check_plan(&plan, &metadata, dataset)?;
    let eval = evaluate(
        client,
        dataset,
        &plan,
        &metadata,
        result_type,
        dataset.row_count,
    )?;
    let final_hop = plan.hops.last().expect("validated plans have hops");
    // Counts and variances are not in the property's unit.
    let unit = match final_hop.agg {
        AggOp::Count | AggOp::Variance => None,
        _ => metadata
            .get(&final_hop.property)
            .and_then(|m| m.unit.clone()),
    };
    let provenance = Provenance {
        parent_column: plan.source_column.clone(),
        unit,
        mixed_units: false,
        entity_ids: (result_type == Datatype::Entity).then_some(eval.entity_ids),
        plan: plan.clone(),
    };
    Ok(dataset.add_augmented_column(
        &plan.output_name,
        eval.values,
        ColumnType::for_datatype(result_type),
        provenance,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRef {
    pub id: EntityId,
    pub label: String,
}

/// A truncated neighbourhood node: either more branches or leaf values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBranch {
    pub entity: NodeRef,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<SampleBranch>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<SampleValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleValue {
    pub value: Value,
    /// Set for entity values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// The neighbourhood of one row, cut to three branches and three leaves per
/// level, with the result of folding that cut-down sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgraphSample {
    pub row: usize,
    pub root: NodeRef,
    /// Properties per hop, outermost first.
    pub properties: Vec<NodeProperty>,
    pub branches: Vec<SampleBranch>,
    /// The op applied at each level, outermost first.
    pub ops: Vec<AggOp>,
    /// Folded over the truncated sample only, so it can differ from the
    /// value a full join produces for this row.
    pub computed_result: Option<Value>,
    pub computed_label: Option<String>,
    #[serde(skip)]
    tree: ValueTree,
    #[serde(skip)]
    labels: HashMap<EntityId, String>,
    #[serde(skip)]
    plan: JoinPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeProperty {
    pub id: PropertyId,
    pub label: String,
}

impl SubgraphSample {
    /// Re-folds the stored sample with different per-level ops (outermost
    /// first) without touching the graph.
    pub fn with_ops(&self, ops: &[AggOp]) -> Result<SubgraphSample, MaterializeError> {
        let plan = self.plan.with_level_ops(ops);
        let mut next = self.clone();
        next.computed_result = fold_tree(&self.tree, &plan, &self.root.id)?;
        next.computed_label = label_of(&next.computed_result, &self.labels);
        next.ops = plan.level_ops();
        next.plan = plan;
        Ok(next)
    }

    pub fn plan(&self) -> &JoinPlan {
        &self.plan
    }
}

fn label_of(value: &Option<Value>, labels: &HashMap<EntityId, String>) -> Option<String> {
    let id = value.as_ref()?.as_entity()?;
    Some(labels.get(id).cloned().unwrap_or_else(|| id.to_string()))
}

fn sample_branches(tree: &ValueTree, labels: &HashMap<EntityId, String>) -> Vec<SampleBranch> {
    let node = |id: &EntityId| NodeRef {
        id: id.clone(),
        label: labels.get(id).cloned().unwrap_or_else(|| id.to_string()),
    };
    let ValueTree::Branches(children) = tree else {
        return Vec::new();
    };
    children
        .iter()
        .map(|(id, sub)| SampleBranch {
            entity: node(id),
            branches: sample_branches(sub, labels),
            values: match sub {
                ValueTree::Leaves(vs) => vs
                    .iter()
                    .map(|v| SampleValue {
                        value: v.clone(),
                        label: v.as_entity().map(|e| node(e).label),
                    })
                    .collect(),
                ValueTree::Branches(_) => Vec::new(),
            },
        })
        .collect()
}

fn tree_entities(tree: &ValueTree, out: &mut Vec<EntityId>) {
    match tree {
        ValueTree::Leaves(vs) => out.extend(vs.iter().filter_map(Value::as_entity).cloned()),
        ValueTree::Branches(children) => {
            for (id, sub) in children {
                out.push(id.clone());
                tree_entities(sub, out);
            }
        }
    }
}

/// Samples the neighbourhood of row `row` for a plan of depth two or more:
/// the first three branches at each level and the first three leaves under
/// each, in statement order.
pub fn example_subgraph(
    client: &KgClient,
    dataset: &Dataset,
    plan: &JoinPlan,
    row: usize,
) -> Result<SubgraphSample, MaterializeError> {
    let metadata = plan_metadata(client, plan)?;
    let plan = plan.clone().with_default_name(&metadata);
    check_plan(&plan, &metadata, dataset)?;
    if row >= dataset.row_count {
        return Err(MaterializeError::RowOutOfRange {
            row,
            row_count: dataset.row_count,
        });
    }
    let cell = dataset.column(&plan.source_column)?.text(row);
    let root = match cell {
        Some(text) => client
            .resolve_cells(&[Some(text)])?
            .pop()
            .flatten()
            .ok_or(MaterializeError::RowUnresolvable { row })?,
        None => return Err(MaterializeError::RowUnresolvable { row }),
    };
    let query = query_gen::compile_subgraph(&plan, &metadata, &root, client.dialect())?;
    let table = client.run_select(&query)?;
    let tree = build_trees(&table, std::slice::from_ref(&root), plan.depth())
        .remove(&root)
        .expect("root always has a tree")
        .truncated(SUBGRAPH_FANOUT);

    let mut ids = vec![root.clone()];
    tree_entities(&tree, &mut ids);
    ids.sort();
    ids.dedup();
    let labels = client.entity_labels(&ids)?;
    let computed_result = fold_tree(&tree, &plan, &root)?;
    Ok(SubgraphSample {
        row,
        root: NodeRef {
            label: labels
                .get(&root)
                .cloned()
                .unwrap_or_else(|| root.to_string()),
            id: root.clone(),
        },
        properties: plan
            .hops
            .iter()
            .map(|h| NodeProperty {
                id: h.property.clone(),
                label: metadata
                    .get(&h.property)
                    .map_or_else(|| h.property.to_string(), |m| m.label.clone()),
            })
            .collect(),
        branches: sample_branches(&tree, &labels),
        ops: plan.level_ops(),
        computed_label: label_of(&computed_result, &labels),
        computed_result,
        tree,
        labels,
        plan,
    })
}
