//! Join plans: which aggregations are legal where, and how multi-hop plans
//! compose.
//!
//! A plan is a list of hops from the source column outwards. Every hop but
//! the last is a `through` hop that steps onto entity-valued neighbours and
//! names a `combine` aggregation; the last hop names the aggregation applied
//! to the values it reaches. Evaluation runs inner-first: the final hop's
//! aggregation is applied per intermediate entity, then each `through` hop
//! combines its children's results.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph_store::{Datatype, KnowledgeGraph, PropertyId, PropertyMeta};

/// Plans deeper than this are rejected unless a caller raises the limit.
pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggOp {
    Count,
    Mean,
    Max,
    Min,
    Sum,
    /// Population variance (divides by n).
    Variance,
    /// One element chosen uniformly with a seeded generator.
    Sample,
    /// Step through an entity-valued property to the next hop.
    Through,
    /// The single element; multiplicity is an error.
    Value,
}

impl AggOp {
    pub const ALL: [AggOp; 9] = [
        AggOp::Count,
        AggOp::Mean,
        AggOp::Max,
        AggOp::Min,
        AggOp::Sum,
        AggOp::Variance,
        AggOp::Sample,
        AggOp::Through,
        AggOp::Value,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggOp::Count => "count",
            AggOp::Mean => "mean",
            AggOp::Max => "max",
            AggOp::Min => "min",
            AggOp::Sum => "sum",
            AggOp::Variance => "variance",
            AggOp::Sample => "sample",
            AggOp::Through => "through",
            AggOp::Value => "value",
        }
    }

    /// The datatype produced by applying this op to values of `input`.
    pub fn result_datatype(self, input: Datatype) -> Datatype {
        match self {
            AggOp::Count | AggOp::Mean | AggOp::Sum | AggOp::Variance => Datatype::Number,
            AggOp::Max | AggOp::Min | AggOp::Sample | AggOp::Value | AggOp::Through => input,
        }
    }
}

impl fmt::Display for AggOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AggOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AggOp::ALL
            .into_iter()
            .find(|op| op.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown aggregation {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cardinality {
    One,
    Many,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HopPosition {
    Intermediate,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub property: PropertyId,
    pub agg: AggOp,
    /// How a `through` hop combines its children's results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combine: Option<AggOp>,
}

impl Hop {
    pub fn new(property: &str, agg: AggOp) -> Self {
        Hop {
            property: PropertyId::new(property).expect("non-empty property id"),
            agg,
            combine: None,
        }
    }

    pub fn through(property: &str, combine: AggOp) -> Self {
        Hop {
            property: PropertyId::new(property).expect("non-empty property id"),
            agg: AggOp::Through,
            combine: Some(combine),
        }
    }

    /// The aggregation this hop applies when folding: `combine` for a
    /// through hop, `agg` otherwise.
    pub fn level_op(&self) -> AggOp {
        match self.agg {
            AggOp::Through => self.combine.unwrap_or(AggOp::Through),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPlan {
    pub source_column: String,
    #[serde(default)]
    pub output_name: String,
    pub hops: Vec<Hop>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl JoinPlan {
    pub fn new(source_column: &str, hops: Vec<Hop>) -> Self {
        JoinPlan {
            source_column: source_column.to_string(),
            output_name: String::new(),
            hops,
            rng_seed: None,
        }
    }

    pub fn named(mut self, output_name: &str) -> Self {
        self.output_name = output_name.to_string();
        self
    }

    pub fn depth(&self) -> usize {
        self.hops.len()
    }

    /// The op applied at each level, outermost first.
    pub fn level_ops(&self) -> Vec<AggOp> {
        self.hops.iter().map(Hop::level_op).collect()
    }

    /// A copy with the per-level ops replaced (outermost first). Entries
    /// beyond the plan depth are ignored.
    pub fn with_level_ops(&self, ops: &[AggOp]) -> JoinPlan {
        let mut plan = self.clone();
        let last = plan.hops.len().saturating_sub(1);
        for (i, (hop, &op)) in plan.hops.iter_mut().zip(ops).enumerate() {
            if i < last {
                hop.combine = Some(op);
            } else {
                hop.agg = op;
            }
        }
        plan
    }

    /// Fills an empty output name with [`describe`].
    pub fn with_default_name(mut self, lookup: &dyn PropertyLookup) -> Self {
        if self.output_name.trim().is_empty() {
            self.output_name = describe(&self, lookup);
        }
        self
    }

    /// Datatype of the values this plan produces, if the plan is well-formed.
    pub fn result_datatype(&self, lookup: &dyn PropertyLookup) -> Option<Datatype> {
        let last = self.hops.last()?;
        let mut kind = last
            .agg
            .result_datatype(lookup.property_meta(&last.property)?.datatype);
        for hop in self.hops.iter().rev().skip(1) {
            kind = hop.combine?.result_datatype(kind);
        }
        Some(kind)
    }
}

/// Access to property metadata by id.
pub trait PropertyLookup {
    fn property_meta(&self, id: &PropertyId) -> Option<&PropertyMeta>;
}

impl PropertyLookup for KnowledgeGraph {
    fn property_meta(&self, id: &PropertyId) -> Option<&PropertyMeta> {
        self.property(id)
    }
}

impl PropertyLookup for HashMap<PropertyId, PropertyMeta> {
    fn property_meta(&self, id: &PropertyId) -> Option<&PropertyMeta> {
        self.get(id)
    }
}

impl PropertyLookup for [PropertyMeta] {
    fn property_meta(&self, id: &PropertyId) -> Option<&PropertyMeta> {
        self.iter().find(|p| &p.id == id)
    }
}

impl PropertyLookup for Vec<PropertyMeta> {
    fn property_meta(&self, id: &PropertyId) -> Option<&PropertyMeta> {
        self.as_slice().property_meta(id)
    }
}

/// The aggregation menu for a property of `datatype` at `position`.
pub fn allowed_aggregations(
    datatype: Datatype,
    cardinality: Cardinality,
    position: HopPosition,
) -> Vec<AggOp> {
    use AggOp::*;
    if position == HopPosition::Intermediate && datatype == Datatype::Entity {
        return vec![Through, Count, Sample];
    }
    let mut ops = match datatype {
        Datatype::Number => vec![Count, Mean, Max, Min, Sum, Variance, Sample],
        Datatype::Datetime => vec![Count, Max, Min, Sample],
        Datatype::String | Datatype::Entity => vec![Count, Sample],
    };
    if cardinality == Cardinality::One {
        ops.push(Value);
    }
    ops
}

/// Ops a final hop (or a through hop's `combine`) may use over `datatype`.
fn final_ops(datatype: Datatype) -> Vec<AggOp> {
    allowed_aggregations(datatype, Cardinality::One, HopPosition::Final)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{}{reason}", hop_index.map(|i| format!("hop {i}: ")).unwrap_or_default())]
pub struct PlanError {
    /// `None` for errors about the plan as a whole.
    pub hop_index: Option<usize>,
    pub reason: String,
}

impl PlanError {
    fn at(hop_index: usize, reason: impl Into<String>) -> Self {
        PlanError {
            hop_index: Some(hop_index),
            reason: reason.into(),
        }
    }

    fn plan(reason: impl Into<String>) -> Self {
        PlanError {
            hop_index: None,
            reason: reason.into(),
        }
    }
}

/// Checks `plan` against the hop rules; collects every violation.
pub fn validate(
    plan: &JoinPlan,
    lookup: &dyn PropertyLookup,
    max_depth: usize,
) -> Result<(), Vec<PlanError>> {
    let mut errors = Vec::new();
    if plan.source_column.trim().is_empty() {
        errors.push(PlanError::plan("source column is empty"));
    }
    if plan.output_name.trim().is_empty() {
        errors.push(PlanError::plan("output name is empty"));
    }
    if plan.hops.is_empty() {
        errors.push(PlanError::plan("plan has no hops"));
        return Err(errors);
    }
    if plan.hops.len() > max_depth {
        errors.push(PlanError::at(
            max_depth,
            format!(
                "plan depth {} exceeds the limit of {max_depth}",
                plan.hops.len()
            ),
        ));
    }

    let last = plan.hops.len() - 1;
    let mut datatypes = Vec::with_capacity(plan.hops.len());
    for (i, hop) in plan.hops.iter().enumerate() {
        let Some(meta) = lookup.property_meta(&hop.property) else {
            errors.push(PlanError::at(
                i,
                format!("unknown property {}", hop.property),
            ));
            datatypes.push(None);
            continue;
        };
        datatypes.push(Some(meta.datatype));
        if i < last {
            if hop.agg != AggOp::Through {
                errors.push(PlanError::at(
                    i,
                    format!("{} cannot be followed by another hop; use through", hop.agg),
                ));
            } else if meta.datatype != Datatype::Entity {
                errors.push(PlanError::at(
                    i,
                    format!("through on {} datatype", meta.datatype),
                ));
            }
            if hop.combine.is_none() {
                errors.push(PlanError::at(i, "through hop needs a combine aggregation"));
            }
        } else {
            if hop.agg == AggOp::Through {
                errors.push(PlanError::at(i, "through as final hop"));
                if meta.datatype != Datatype::Entity {
                    errors.push(PlanError::at(
                        i,
                        format!("through on {} datatype", meta.datatype),
                    ));
                }
            } else if !final_ops(meta.datatype).contains(&hop.agg) {
                errors.push(PlanError::at(
                    i,
                    format!("{} is not defined for {} values", hop.agg, meta.datatype),
                ));
            }
            if hop.combine.is_some() {
                errors.push(PlanError::at(
                    i,
                    "combine is only meaningful on a through hop",
                ));
            }
        }
    }

    // Combine ops see the result type of everything inside them.
    if let Some(Some(final_type)) = datatypes.last() {
        let mut kind = plan.hops[last].agg.result_datatype(*final_type);
        for i in (0..last).rev() {
            let Some(combine) = plan.hops[i].combine else {
                break;
            };
            if combine == AggOp::Through || !final_ops(kind).contains(&combine) {
                errors.push(PlanError::at(
                    i,
                    format!("combine {combine} is not defined for {kind} values"),
                ));
                break;
            }
            kind = combine.result_datatype(kind);
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// A readable phrase for the plan, e.g.
/// `min over sharesBorderWith of max of lifeExpectancy`.
pub fn describe(plan: &JoinPlan, lookup: &dyn PropertyLookup) -> String {
    let label = |id: &PropertyId| {
        lookup
            .property_meta(id)
            .map_or_else(|| id.to_string(), |m| m.label.clone())
    };
    let mut parts = Vec::new();
    let last = plan.hops.len().saturating_sub(1);
    for (i, hop) in plan.hops.iter().enumerate() {
        if i < last {
            let combine = hop.combine.map_or("through", AggOp::as_str);
            parts.push(format!("{combine} over {}", label(&hop.property)));
        } else {
            parts.push(format!("{} of {}", hop.agg, label(&hop.property)));
        }
    }
    parts.join(" of ")
}
