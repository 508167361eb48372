//! Embedded in-memory knowledge graph.
//!
//! This is the offline backend for [`crate::kg_client`] and the ground truth
//! for tests: fixtures load into a [`KnowledgeGraph`], and generated queries
//! run against it through [`execute_select`].

mod fixture;
mod model;
pub mod sparql;

pub use fixture::{load_fixture, write_fixture, FixtureError};
pub use model::{
    BuildError, Datatype, Decimal, EntityId, EntityMeta, GraphBuilder, KnowledgeGraph, PropertyId,
    PropertyMeta, Statement, Timestamp, Value,
};
pub use sparql::{BindingTable, SparqlError, Term};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown entity {0}")]
pub struct UnknownEntity(pub EntityId);

/// Statements with subject `entity`, optionally restricted to `property`,
/// in insertion order.
pub fn statements_of(
    graph: &KnowledgeGraph,
    entity: &EntityId,
    property: Option<&PropertyId>,
) -> Result<Vec<Statement>, UnknownEntity> {
    let outgoing = graph
        .outgoing_of(entity)
        .ok_or_else(|| UnknownEntity(entity.clone()))?;
    Ok(outgoing
        .iter()
        .filter(|(p, _)| property.is_none_or(|want| want == p))
        .map(|(p, v)| Statement {
            subject: entity.clone(),
            property: p.clone(),
            value: v.clone(),
        })
        .collect())
}

/// A search hit: entity id, label and description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub id: EntityId,
    pub label: String,
    pub description: String,
}

/// Finds entities whose label or alias matches `query`.
///
/// Exact label matches come first, then exact alias matches, then
/// case-insensitive label or alias matches. Within a tier, hits are ordered
/// by entity id.
pub fn search_entities(graph: &KnowledgeGraph, query: &str) -> Vec<SearchHit> {
    if query.is_empty() {
        return Vec::new();
    }
    let folded = query.to_lowercase();
    let mut hits: Vec<(u8, &EntityMeta)> = graph
        .entities()
        .filter_map(|e| {
            let tier = if e.label == query {
                0
            } else if e.aliases.iter().any(|a| a == query) {
                1
            } else if e.label.to_lowercase() == folded
                || e.aliases.iter().any(|a| a.to_lowercase() == folded)
            {
                2
            } else {
                return None;
            };
            Some((tier, e))
        })
        .collect();
    hits.sort_by(|(ta, a), (tb, b)| ta.cmp(tb).then_with(|| a.id.cmp(&b.id)));
    hits.into_iter()
        .map(|(_, e)| SearchHit {
            id: e.id.clone(),
            label: e.label.clone(),
            description: e.description.clone(),
        })
        .collect()
}

/// Parses and runs a query in the supported subset.
pub fn execute_select(graph: &KnowledgeGraph, query: &str) -> Result<BindingTable, SparqlError> {
    let parsed = sparql::parse(query)?;
    sparql::execute(graph, &parsed)
}
