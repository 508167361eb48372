//! Compiles join plans into SPARQL.
//!
//! Three query shapes are emitted, all with a `VALUES` block on `?e`:
//!
//! * discovery: `SELECT ?e ?p (COUNT(?v) AS ?n) WHERE { VALUES ?e { … } ?e ?p ?v . } GROUP BY ?e ?p`
//! * values fetch: the raw hop chain `?e P1 ?x1 . ?x1 P2 ?x2 …`, one row per path
//! * subgraph: the same chain for a single entity
//!
//! Aggregation is never pushed into SPARQL for plans; the materializer folds
//! the raw rows so the inner/outer order is explicit.

use crate::graph_store::{EntityId, PropertyId};
use crate::planner::{self, JoinPlan, PlanError, PropertyLookup, DEFAULT_MAX_DEPTH};

const WIKIDATA_PREFIXES: &str = "PREFIX wd: <http://www.wikidata.org/entity/>\nPREFIX wdt: <http://www.wikidata.org/prop/direct/>\n";

/// How identifiers are spelled in emitted queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dialect {
    /// Bare ids (`Q1`, `P1`), understood by the embedded executor.
    Local,
    /// `wd:`/`wdt:` prefixed names: entities and truthy direct claims.
    Wikidata,
}

impl Dialect {
    fn entity(self, id: &EntityId) -> String {
        match self {
            Dialect::Local => id.to_string(),
            Dialect::Wikidata => format!("wd:{id}"),
        }
    }

    fn property(self, id: &str) -> String {
        match self {
            Dialect::Local => id.to_string(),
            Dialect::Wikidata => format!("wdt:{id}"),
        }
    }

    fn prologue(self) -> &'static str {
        match self {
            Dialect::Local => "",
            Dialect::Wikidata => WIKIDATA_PREFIXES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Discovery,
    ValuesFetch,
    Subgraph,
}

/// Query text plus the variables it projects, in `SELECT` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparqlText {
    pub text: String,
    pub variables: Vec<String>,
    pub kind: QueryKind,
}

/// A query with an open `VALUES ?e { … }` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    dialect: Dialect,
    kind: QueryKind,
    variables: Vec<String>,
    head: String,
    tail: String,
}

impl QueryTemplate {
    /// Fills the `VALUES` slot with `entities`.
    pub fn instantiate(&self, entities: &[EntityId]) -> SparqlText {
        let ids: Vec<String> = entities.iter().map(|e| self.dialect.entity(e)).collect();
        SparqlText {
            text: format!("{}{}{}", self.head, ids.join(" "), self.tail),
            variables: self.variables.clone(),
            kind: self.kind,
        }
    }

    pub fn kind(&self) -> QueryKind {
        self.kind
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryGenError {
    #[error("no entities to query")]
    EmptyEntitySet,
    #[error("invalid plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan(Vec<PlanError>),
}

pub fn discovery_template(dialect: Dialect) -> QueryTemplate {
    QueryTemplate {
        dialect,
        kind: QueryKind::Discovery,
        variables: vec!["e".into(), "p".into(), "n".into()],
        head: format!(
            "{}SELECT ?e ?p (COUNT(?v) AS ?n) WHERE {{ VALUES ?e {{ ",
            dialect.prologue()
        ),
        tail: " } ?e ?p ?v . } GROUP BY ?e ?p".into(),
    }
}

/// One row per (entity, property) with the number of statements.
pub fn compile_discovery(
    entities: &[EntityId],
    dialect: Dialect,
) -> Result<SparqlText, QueryGenError> {
    if entities.is_empty() {
        return Err(QueryGenError::EmptyEntitySet);
    }
    Ok(discovery_template(dialect).instantiate(entities))
}

/// Every `(?e, ?p, ?v)` statement of the slotted entities restricted to
/// `properties`; feeds attribute details after discovery ranking.
pub fn detail_template(properties: &[PropertyId], dialect: Dialect) -> QueryTemplate {
    let props: Vec<String> = properties
        .iter()
        .map(|p| dialect.property(p.as_str()))
        .collect();
    QueryTemplate {
        dialect,
        kind: QueryKind::Discovery,
        variables: vec!["e".into(), "p".into(), "v".into()],
        head: format!(
            "{}SELECT ?e ?p ?v WHERE {{ VALUES ?e {{ ",
            dialect.prologue()
        ),
        tail: format!(" }} VALUES ?p {{ {} }} ?e ?p ?v . }}", props.join(" ")),
    }
}

fn chain_template(plan: &JoinPlan, dialect: Dialect, kind: QueryKind) -> QueryTemplate {
    let mut variables = vec!["e".to_string()];
    let mut patterns = String::new();
    for (i, hop) in plan.hops.iter().enumerate() {
        let var = format!("x{}", i + 1);
        patterns.push_str(&format!(
            "?{} {} ?{var} . ",
            variables[i],
            dialect.property(hop.property.as_str())
        ));
        variables.push(var);
    }
    let select: Vec<String> = variables.iter().map(|v| format!("?{v}")).collect();
    QueryTemplate {
        dialect,
        kind,
        head: format!(
            "{}SELECT {} WHERE {{ VALUES ?e {{ ",
            dialect.prologue(),
            select.join(" ")
        ),
        tail: format!(" }} {patterns}}}"),
        variables,
    }
}

/// The raw-path query for `plan`, with an open entity slot.
pub fn values_fetch_template(
    plan: &JoinPlan,
    lookup: &dyn PropertyLookup,
    dialect: Dialect,
) -> Result<QueryTemplate, QueryGenError> {
    planner::validate(plan, lookup, DEFAULT_MAX_DEPTH).map_err(QueryGenError::InvalidPlan)?;
    Ok(chain_template(plan, dialect, QueryKind::ValuesFetch))
}

/// Selects `(?e, ?x1, …, ?xk)` for every complete path of the plan's hops.
/// Paths that stop short of the last hop produce no rows.
pub fn compile_values_fetch(
    plan: &JoinPlan,
    lookup: &dyn PropertyLookup,
    entities: &[EntityId],
    dialect: Dialect,
) -> Result<SparqlText, QueryGenError> {
    let template = values_fetch_template(plan, lookup, dialect)?;
    if entities.is_empty() {
        return Err(QueryGenError::EmptyEntitySet);
    }
    Ok(template.instantiate(entities))
}

/// The example-neighbourhood query for one entity.
///
/// The subset has no per-branch `LIMIT`, so the query returns every path;
/// callers keep the first `per_level_limit` distinct values at each level.
pub fn compile_subgraph(
    plan: &JoinPlan,
    lookup: &dyn PropertyLookup,
    entity: &EntityId,
    dialect: Dialect,
) -> Result<SparqlText, QueryGenError> {
    planner::validate(plan, lookup, DEFAULT_MAX_DEPTH).map_err(QueryGenError::InvalidPlan)?;
    if plan.depth() < 2 {
        return Err(QueryGenError::InvalidPlan(vec![PlanError {
            hop_index: None,
            reason: "an example subgraph needs at least two hops".into(),
        }]));
    }
    Ok(
        chain_template(plan, dialect, QueryKind::Subgraph)
            .instantiate(std::slice::from_ref(entity)),
    )
}
