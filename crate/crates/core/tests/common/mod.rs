#![allow(dead_code)]

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use kgforage::graph_store::{
    self, BindingTable, EntityId, KnowledgeGraph, PropertyId, PropertyMeta, SearchHit, Value,
};
use kgforage::kg_client::{BackendConfig, ClientError, GraphBackend, KgClient, LocalBackend};
use kgforage::materializer::{node_seed, sample_index};
use kgforage::planner::{AggOp, JoinPlan};
use kgforage::query_gen::{Dialect, SparqlText};
use kgforage::tabular::{import_csv, CsvOptions, Dataset};

/// Fixtures live in the core crate; this module is also compiled into the
/// server crate's tests, which sit next to it.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

pub fn load_graph(name: &str) -> Arc<KnowledgeGraph> {
    let file = File::open(fixture(name)).expect("fixture exists");
    Arc::new(graph_store::load_fixture(BufReader::new(file)).expect("fixture loads"))
}

pub fn client_for(graph: Arc<KnowledgeGraph>) -> KgClient {
    KgClient::with_backend(
        Arc::new(LocalBackend::new(graph)),
        &BackendConfig::local("unused"),
    )
    .unwrap()
}

pub fn dataset(csv: &str) -> Dataset {
    import_csv(csv.as_bytes(), CsvOptions::default()).unwrap()
}

pub fn countries() -> Dataset {
    dataset(&std::fs::read_to_string(fixture("mini_countries.csv")).unwrap())
}

/// Wraps a backend and records every call.
pub struct CountingBackend {
    pub inner: Arc<dyn GraphBackend>,
    pub searches: Mutex<Vec<String>>,
    pub queries: Mutex<Vec<String>>,
    /// Fail every select after this many have succeeded.
    pub fail_after: Option<usize>,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn GraphBackend>) -> Self {
        CountingBackend {
            inner,
            searches: Mutex::new(Vec::new()),
            queries: Mutex::new(Vec::new()),
            fail_after: None,
        }
    }

    pub fn search_count(&self) -> usize {
        self.searches.lock().unwrap().len()
    }

    pub fn queries(&self) -> Vec<String> {
        self.queries.lock().unwrap().clone()
    }
}

impl GraphBackend for CountingBackend {
    fn dialect(&self) -> Dialect {
        self.inner.dialect()
    }

    fn search(&self, text: &str) -> Result<Vec<SearchHit>, ClientError> {
        self.searches.lock().unwrap().push(text.to_string());
        self.inner.search(text)
    }

    fn select(&self, query: &SparqlText) -> Result<BindingTable, ClientError> {
        let mut queries = self.queries.lock().unwrap();
        if self.fail_after.is_some_and(|n| queries.len() >= n) {
            return Err(ClientError::unavailable("backend went away"));
        }
        queries.push(query.text.clone());
        drop(queries);
        self.inner.select(query)
    }

    fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError> {
        self.inner.properties(ids)
    }

    fn entity_labels(&self, ids: &[EntityId]) -> Result<HashMap<EntityId, String>, ClientError> {
        self.inner.entity_labels(ids)
    }
}

/// Entity ids inside the `VALUES ?e { … }` block of a query.
pub fn values_entities(query: &str) -> Vec<String> {
    let start = query.find("VALUES ?e {").expect("query has a VALUES block") + "VALUES ?e {".len();
    let end = start + query[start..].find('}').unwrap();
    query[start..end]
        .split_whitespace()
        .map(|s| s.trim_start_matches("wd:").to_string())
        .collect()
}

/// Brute-force evaluation of a plan by walking the graph directly.
///
/// Intermediate entities count only if some complete path continues from
/// them; aggregation is written out here rather than borrowed from the
/// library (only the seeded sample draw is shared, since it is defined by
/// the library's seed derivation).
pub mod oracle {
    use super::*;
    use kgforage::graph_store::Datatype;
    use kgforage::materializer::{materialize, AggregateError, MaterializeError};
    use kgforage::planner::{self, Hop, DEFAULT_MAX_DEPTH};
    use kgforage::tabular::ColumnType;

    #[derive(Debug, Clone, PartialEq)]
    pub enum Outcome {
        Value(Option<Value>),
        Multiplicity,
    }

    fn values(g: &KnowledgeGraph, e: &EntityId, p: &PropertyId) -> Vec<Value> {
        graph_store::statements_of(g, e, Some(p))
            .unwrap()
            .into_iter()
            .map(|s| s.value)
            .collect()
    }

    fn reaches(g: &KnowledgeGraph, e: &EntityId, hops: &[PropertyId]) -> bool {
        match hops {
            [last] => !values(g, e, last).is_empty(),
            [first, rest @ ..] => values(g, e, first)
                .iter()
                .filter_map(Value::as_entity)
                .any(|c| reaches(g, c, rest)),
            [] => false,
        }
    }

    pub fn agg(xs: &[Value], op: AggOp, seed: u64) -> Outcome {
        let nums = || xs.iter().map(|v| v.as_f64().unwrap()).collect::<Vec<f64>>();
        let out = match op {
            AggOp::Count => Value::number(xs.len() as f64),
            _ if xs.is_empty() => None,
            AggOp::Mean => Value::number(nums().iter().sum::<f64>() / xs.len() as f64),
            AggOp::Sum => Value::number(nums().iter().sum::<f64>()),
            AggOp::Variance => {
                let n = nums();
                let m = n.iter().sum::<f64>() / n.len() as f64;
                Value::number(n.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n.len() as f64)
            }
            AggOp::Max | AggOp::Min => {
                let key = |v: &Value| match v {
                    Value::Number(d) => d.to_f64(),
                    Value::DateTime(t) => t.epoch_seconds(),
                    other => panic!("not ordered: {other:?}"),
                };
                let mut best = xs[0].clone();
                for v in &xs[1..] {
                    if (op == AggOp::Max && key(v) > key(&best))
                        || (op == AggOp::Min && key(v) < key(&best))
                    {
                        best = v.clone();
                    }
                }
                Some(best)
            }
            AggOp::Sample => Some(xs[sample_index(seed, xs.len())].clone()),
            AggOp::Value if xs.len() > 1 => return Outcome::Multiplicity,
            AggOp::Value => Some(xs[0].clone()),
            AggOp::Through => panic!("through is not an aggregation"),
        };
        Outcome::Value(out)
    }

    fn walk(
        g: &KnowledgeGraph,
        plan: &JoinPlan,
        level: usize,
        path: &mut Vec<EntityId>,
        seed: u64,
    ) -> Outcome {
        let e = path.last().unwrap().clone();
        let hop = &plan.hops[level];
        let refs: Vec<&EntityId> = path.iter().collect();
        let s = node_seed(seed, &refs);
        if level + 1 == plan.hops.len() {
            return agg(&values(g, &e, &hop.property), hop.agg, s);
        }
        let rest: Vec<PropertyId> = plan.hops[level + 1..]
            .iter()
            .map(|h| h.property.clone())
            .collect();
        let mut children: Vec<EntityId> = Vec::new();
        for v in values(g, &e, &hop.property) {
            let c = v.as_entity().unwrap().clone();
            if !children.contains(&c) && reaches(g, &c, &rest) {
                children.push(c);
            }
        }
        let mut results = Vec::new();
        for c in children {
            path.push(c);
            let r = walk(g, plan, level + 1, path, seed);
            path.pop();
            match r {
                Outcome::Multiplicity => return Outcome::Multiplicity,
                Outcome::Value(Some(v)) => results.push(v),
                Outcome::Value(None) => {}
            }
        }
        agg(&results, hop.combine.unwrap(), s)
    }

    /// Every plan of depth one or two the validator accepts on `g`, over a
    /// source column named `Country`.
    pub fn all_plans(g: &KnowledgeGraph) -> Vec<JoinPlan> {
        let props: Vec<_> = g.properties().map(|p| p.id.clone()).collect();
        let ops: Vec<AggOp> = AggOp::ALL
            .into_iter()
            .filter(|o| *o != AggOp::Through)
            .collect();
        let mut plans = Vec::new();
        for p in &props {
            for &op in &ops {
                plans.push(JoinPlan::new("Country", vec![Hop::new(p.as_str(), op)]));
            }
        }
        for p in &props {
            for q in &props {
                for &outer in &ops {
                    for &inner in &ops {
                        plans.push(JoinPlan::new(
                            "Country",
                            vec![Hop::through(p.as_str(), outer), Hop::new(q.as_str(), inner)],
                        ));
                    }
                }
            }
        }
        plans
            .into_iter()
            .map(|p| p.with_default_name(g))
            .filter(|p| planner::validate(p, g, DEFAULT_MAX_DEPTH).is_ok())
            .collect()
    }

    /// Materializes every plan from [`all_plans`] over a six-row dataset
    /// (three entities, an alias, an unknown name, an empty cell) and compares
    /// each cell with [`evaluate`], numbers to within 1e-9. Returns the number
    /// of plans checked.
    pub fn check_all_plans(g: &KnowledgeGraph, client: &KgClient) -> Result<usize, String> {
        let d = dataset("Country\nAtlantis\nBorduria\nCascadia\nATL\nNowhere\n\"\"\n");
        let roots: Vec<Option<EntityId>> = ["Q1", "Q2", "Q3", "Q1"]
            .iter()
            .map(|id| EntityId::new(*id))
            .chain([None, None])
            .collect();
        let plans = all_plans(g);
        for (i, plan) in plans.iter().enumerate() {
            let plan = JoinPlan {
                rng_seed: Some(i as u64),
                ..plan.clone()
            };
            let expected: Vec<Outcome> = roots
                .iter()
                .map(|r| match r {
                    Some(e) => evaluate(g, &plan, e),
                    None => Outcome::Value(None),
                })
                .collect();
            let got = materialize(client, &d, &plan);
            if expected.contains(&Outcome::Multiplicity) {
                match got {
                    Err(MaterializeError::Aggregate(AggregateError::MultiplicityViolation {
                        ..
                    })) => continue,
                    other => {
                        return Err(format!(
                            "{plan:?}: expected multiplicity error, got {other:?}"
                        ))
                    }
                }
            }
            let got = got.map_err(|e| format!("{plan:?}: {e}"))?;
            let column = got.columns.last().unwrap();
            if column.cells.len() != expected.len() {
                return Err(format!("{plan:?}: {} cells", column.cells.len()));
            }
            for (row, (cell, want)) in column.cells.iter().zip(&expected).enumerate() {
                let Outcome::Value(want) = want else {
                    unreachable!()
                };
                let same = match (cell, want) {
                    (Some(Value::Number(a)), Some(Value::Number(b))) => {
                        (a.to_f64() - b.to_f64()).abs() <= 1e-9
                    }
                    _ => cell == want,
                };
                if !same {
                    return Err(format!("{plan:?} row {row}: {cell:?} vs {want:?}"));
                }
            }
            let datatype = plan.result_datatype(g).unwrap();
            if column.ctype != ColumnType::for_datatype(datatype) {
                return Err(format!("{plan:?}: column type {:?}", column.ctype));
            }
            if datatype == Datatype::Entity
                && !column
                    .cells
                    .iter()
                    .flatten()
                    .all(|v| matches!(v, Value::Text(_)))
            {
                return Err(format!("{plan:?}: entity results not rendered as labels"));
            }
        }
        Ok(plans.len())
    }

    /// Value for one resolved root; entity results are rendered as labels.
    pub fn evaluate(g: &KnowledgeGraph, plan: &JoinPlan, root: &EntityId) -> Outcome {
        let mut path = vec![root.clone()];
        match walk(g, plan, 0, &mut path, plan.rng_seed.unwrap_or(0)) {
            Outcome::Value(Some(Value::Entity(id))) => {
                Outcome::Value(Some(Value::Text(g.entity(&id).unwrap().label.clone())))
            }
            other => other,
        }
    }
}

/// `n` entities `E0…` labelled `Entity i`; entity `i` holds P1 (number,
/// value `i`) when `has_p1(i)` and P2 (string) for every even `i`.
pub fn synthetic_graph(n: usize, has_p1: impl Fn(usize) -> bool) -> Arc<KnowledgeGraph> {
    use kgforage::graph_store::{Datatype, EntityMeta, GraphBuilder, Statement};
    let mut b = GraphBuilder::new();
    for (id, datatype) in [("P1", Datatype::Number), ("P2", Datatype::String)] {
        b.property(PropertyMeta {
            id: PropertyId::new(id).unwrap(),
            label: format!("prop {id}"),
            description: String::new(),
            datatype,
            unit: None,
        })
        .unwrap();
    }
    for i in 0..n {
        let id = EntityId::new(format!("E{i}")).unwrap();
        b.entity(EntityMeta {
            id: id.clone(),
            label: format!("Entity {i}"),
            aliases: Vec::new(),
            description: String::new(),
        })
        .unwrap();
        if has_p1(i) {
            b.statement(Statement {
                subject: id.clone(),
                property: PropertyId::new("P1").unwrap(),
                value: Value::number(i as f64).unwrap(),
            })
            .unwrap();
        }
        if i % 2 == 0 {
            b.statement(Statement {
                subject: id,
                property: PropertyId::new("P2").unwrap(),
                value: Value::text(format!("tag {i}")),
            })
            .unwrap();
        }
    }
    Arc::new(b.finish().unwrap())
}

/// A one-column dataset `Name` listing `Entity 0…Entity n-1`.
pub fn synthetic_dataset(n: usize) -> Dataset {
    let mut csv = String::from("Name\n");
    for i in 0..n {
        csv.push_str(&format!("Entity {i}\n"));
    }
    dataset(&csv)
}

/// Exact fraction of rows whose cell resolves to an entity holding each
/// property, computed by scanning the graph directly.
pub fn exact_coverage(g: &KnowledgeGraph, d: &Dataset, column: &str) -> HashMap<PropertyId, f64> {
    let col = d.column(column).unwrap();
    let mut hits: HashMap<PropertyId, usize> = HashMap::new();
    for row in 0..d.row_count {
        let Some(text) = col.text(row) else { continue };
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let Some(hit) = graph_store::search_entities(g, &norm).into_iter().next() else {
            continue;
        };
        let mut props: Vec<PropertyId> = graph_store::statements_of(g, &hit.id, None)
            .unwrap()
            .into_iter()
            .map(|s| s.property)
            .collect();
        props.sort();
        props.dedup();
        for p in props {
            *hits.entry(p).or_default() += 1;
        }
    }
    hits.into_iter()
        .map(|(p, h)| (p, h as f64 / d.row_count as f64))
        .collect()
}

/// Query text fixtures and a traversal oracle for generated SPARQL.
pub mod dialect {
    use std::path::PathBuf;

    use kgforage::graph_store::{
        execute_select, statements_of, BindingTable, Datatype, EntityId, KnowledgeGraph,
        PropertyId, Value,
    };
    use kgforage::planner::{AggOp, Hop, JoinPlan};
    use kgforage::query_gen::{
        compile_discovery, compile_subgraph, compile_values_fetch, detail_template, Dialect,
    };

    pub fn golden_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
    }

    pub fn golden_plans() -> Vec<(&'static str, JoinPlan)> {
        vec![
            (
                "mean_population",
                JoinPlan::new("country", vec![Hop::new("P1082", AggOp::Mean)]).named("x"),
            ),
            (
                "government_class",
                JoinPlan::new(
                    "country",
                    vec![
                        Hop::through("P122", AggOp::Sample),
                        Hop::new("P279", AggOp::Sample),
                    ],
                )
                .named("x"),
            ),
            (
                "neighbour_life_expectancy",
                JoinPlan::new(
                    "country",
                    vec![
                        Hop::through("P47", AggOp::Min),
                        Hop::new("P2250", AggOp::Max),
                    ],
                )
                .named("x"),
            ),
            (
                "three_hops",
                JoinPlan::new(
                    "country",
                    vec![
                        Hop::through("P47", AggOp::Count),
                        Hop::through("P122", AggOp::Sample),
                        Hop::new("P279", AggOp::Count),
                    ],
                )
                .named("x"),
            ),
        ]
    }

    /// `(file name, query text)` for every golden query, over Q796 and Q794
    /// of the ACLED fixture.
    pub fn golden_texts(g: &KnowledgeGraph) -> Vec<(String, String)> {
        let entities = [
            EntityId::new("Q796").unwrap(),
            EntityId::new("Q794").unwrap(),
        ];
        let mut out = Vec::new();
        for dialect in [Dialect::Local, Dialect::Wikidata] {
            let tag = match dialect {
                Dialect::Local => "local",
                Dialect::Wikidata => "wikidata",
            };
            out.push((
                format!("discovery.{tag}.rq"),
                compile_discovery(&entities, dialect).unwrap().text,
            ));
            let detail = detail_template(
                &[
                    PropertyId::new("P122").unwrap(),
                    PropertyId::new("P1082").unwrap(),
                ],
                dialect,
            );
            out.push((
                format!("detail.{tag}.rq"),
                detail.instantiate(&entities).text,
            ));
            for (name, plan) in golden_plans() {
                let text = compile_values_fetch(&plan, g, &entities, dialect)
                    .unwrap()
                    .text;
                out.push((format!("{name}.{tag}.rq"), text));
                if plan.depth() >= 2 {
                    let text = compile_subgraph(&plan, g, &entities[0], dialect)
                        .unwrap()
                        .text;
                    out.push((format!("{name}.subgraph.{tag}.rq"), text));
                }
            }
        }
        out
    }

    /// Every `(e, x1, …, xk)` path through `props`, by direct traversal.
    pub fn traverse(
        g: &KnowledgeGraph,
        roots: &[EntityId],
        props: &[PropertyId],
    ) -> Vec<Vec<Value>> {
        fn go(
            g: &KnowledgeGraph,
            at: &EntityId,
            props: &[PropertyId],
            prefix: &mut Vec<Value>,
            out: &mut Vec<Vec<Value>>,
        ) {
            let Some((first, rest)) = props.split_first() else {
                out.push(prefix.clone());
                return;
            };
            for s in statements_of(g, at, Some(first)).unwrap() {
                prefix.push(s.value.clone());
                if rest.is_empty() {
                    out.push(prefix.clone());
                } else if let Value::Entity(next) = &s.value {
                    go(g, next, rest, prefix, out);
                }
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        for r in roots {
            let mut prefix = vec![Value::Entity(r.clone())];
            go(g, r, props, &mut prefix, &mut out);
        }
        out
    }

    pub fn rows_as_values(t: &BindingTable) -> Vec<Vec<Value>> {
        t.rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| c.as_ref().unwrap().as_value().unwrap().clone())
                    .collect()
            })
            .collect()
    }

    pub fn sorted(mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        rows
    }

    /// Compiles every property chain of length `1..=max_depth` (non-final
    /// hops over entity-valued properties) from every entity of `g`, runs it
    /// in both dialects and compares the bindings with [`traverse`] as
    /// multisets. Returns the number of chains checked.
    pub fn check_round_trip(g: &KnowledgeGraph, max_depth: usize) -> Result<usize, String> {
        let roots: Vec<EntityId> = g.entities().map(|e| e.id.clone()).collect();
        let entity_props: Vec<PropertyId> = g
            .properties()
            .filter(|p| p.datatype == Datatype::Entity)
            .map(|p| p.id.clone())
            .collect();
        let all_props: Vec<PropertyId> = g.properties().map(|p| p.id.clone()).collect();

        let mut chains: Vec<Vec<PropertyId>> = all_props.iter().map(|p| vec![p.clone()]).collect();
        for depth in 2..=max_depth {
            let prefixes: Vec<Vec<PropertyId>> = chains
                .iter()
                .filter(|c| c.len() == depth - 1 && c.iter().all(|p| entity_props.contains(p)))
                .cloned()
                .collect();
            for prefix in prefixes {
                for last in &all_props {
                    let mut c = prefix.clone();
                    c.push(last.clone());
                    chains.push(c);
                }
            }
        }

        for chain in &chains {
            let last = chain.len() - 1;
            let hops: Vec<Hop> = chain
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i < last {
                        Hop::through(p.as_str(), AggOp::Count)
                    } else {
                        Hop::new(p.as_str(), AggOp::Count)
                    }
                })
                .collect();
            let plan = JoinPlan::new("country", hops).named("x");
            let want = sorted(traverse(g, &roots, chain));
            for dialect in [Dialect::Local, Dialect::Wikidata] {
                let query = compile_values_fetch(&plan, g, &roots, dialect)
                    .map_err(|e| format!("{chain:?}: {e}"))?;
                let table =
                    execute_select(g, &query.text).map_err(|e| format!("{chain:?}: {e}"))?;
                if table.variables != query.variables {
                    return Err(format!("{chain:?}: variables {:?}", table.variables));
                }
                if sorted(rows_as_values(&table)) != want {
                    return Err(format!(
                        "{chain:?} ({dialect:?}): bindings differ from traversal"
                    ));
                }
            }
        }
        Ok(chains.len())
    }
}
