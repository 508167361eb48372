use std::cmp::Ordering;
use std::collections::HashSet;

use super::{
    AggregateFn, BindingTable, GroupItem, LiteralValue, PatternTerm, Projection, SelectQuery,
    SparqlError, Term, TriplePattern,
};
use crate::graph_store::model::{Decimal, EntityId, KnowledgeGraph, PropertyId, Timestamp, Value};

/// One solution: a binding per variable slot.
type Solution = Vec<Option<Term>>;

struct Context<'g> {
    graph: &'g KnowledgeGraph,
    slots: Vec<String>,
    predicate_vars: HashSet<String>,
}

impl Context<'_> {
    fn slot(&self, var: &str) -> usize {
        self.slots
            .iter()
            .position(|s| s == var)
            .expect("every variable is assigned a slot")
    }

    /// A constant in a pattern, interpreted for the position it occupies.
    fn constant(&self, term: &PatternTerm, as_property: bool) -> Result<Term, SparqlError> {
        match term {
            PatternTerm::Node(id) if as_property => Ok(Term::Property(
                PropertyId::new(id.clone()).expect("lexer never yields empty names"),
            )),
            PatternTerm::Node(id) => Ok(Term::Value(Value::Entity(
                EntityId::new(id.clone()).expect("lexer never yields empty names"),
            ))),
            PatternTerm::Literal(lit) => literal(lit).map(Term::Value),
            PatternTerm::Var(_) => unreachable!("variables are not constants"),
        }
    }
}

fn literal(lit: &LiteralValue) -> Result<Value, SparqlError> {
    let bad = |what: &str, text: &str| SparqlError::Parse {
        position: 0,
        reason: format!("invalid {what} literal {text:?}"),
    };
    match lit {
        LiteralValue::Number(n) => Decimal::parse(n)
            .map(Value::Number)
            .ok_or_else(|| bad("numeric", n)),
        LiteralValue::Text(s) => Ok(Value::Text(s.clone())),
        LiteralValue::DateTime(s) => Timestamp::parse(s)
            .map(Value::DateTime)
            .ok_or_else(|| bad("dateTime", s)),
    }
}

/// Runs a parsed query by direct pattern matching over `graph`.
///
/// Solutions are produced in a deterministic order: `VALUES` rows in the
/// order written, subjects in entity order, statements in insertion order.
pub fn execute(graph: &KnowledgeGraph, query: &SelectQuery) -> Result<BindingTable, SparqlError> {
    let mut slots = Vec::new();
    super::collect_vars(&query.pattern, &mut slots);
    if let Some(projections) = &query.projections {
        for p in projections {
            let var = match p {
                Projection::Var(v) => v,
                Projection::Aggregate {
                    argument: Some(a), ..
                } => a,
                Projection::Aggregate { .. } => continue,
            };
            if !slots.contains(var) {
                slots.push(var.clone());
            }
        }
    }
    for g in &query.group_by {
        if !slots.contains(g) {
            slots.push(g.clone());
        }
    }
    let mut predicate_vars = HashSet::new();
    collect_predicate_vars(&query.pattern, &mut predicate_vars);
    let ctx = Context {
        graph,
        slots,
        predicate_vars,
    };

    let width = ctx.slots.len();
    let solutions = eval_group(&ctx, &query.pattern, vec![vec![None; width]])?;
    let mut table = project(&ctx, query, solutions)?;
    if let Some(limit) = query.limit {
        table.rows.truncate(limit);
    }
    Ok(table)
}

fn collect_predicate_vars(items: &[GroupItem], out: &mut HashSet<String>) {
    for item in items {
        match item {
            GroupItem::Triple(t) => {
                if let PatternTerm::Var(v) = &t.predicate {
                    out.insert(v.clone());
                }
            }
            GroupItem::Optional(inner) => collect_predicate_vars(inner, out),
            GroupItem::Values { .. } => {}
        }
    }
}

fn eval_group(
    ctx: &Context<'_>,
    items: &[GroupItem],
    mut solutions: Vec<Solution>,
) -> Result<Vec<Solution>, SparqlError> {
    for item in items {
        solutions = match item {
            GroupItem::Triple(t) => {
                let mut out = Vec::new();
                for s in &solutions {
                    match_triple(ctx, t, s, &mut out)?;
                }
                out
            }
            GroupItem::Values { variables, rows } => {
                let slots: Vec<usize> = variables.iter().map(|v| ctx.slot(v)).collect();
                let mut out = Vec::new();
                for s in &solutions {
                    'rows: for row in rows {
                        let mut candidate = s.clone();
                        for ((var, &slot), term) in variables.iter().zip(&slots).zip(row) {
                            let Some(term) = term else { continue };
                            let value = ctx.constant(term, ctx.predicate_vars.contains(var))?;
                            match &candidate[slot] {
                                Some(existing) if *existing != value => continue 'rows,
                                _ => candidate[slot] = Some(value),
                            }
                        }
                        out.push(candidate);
                    }
                }
                out
            }
            GroupItem::Optional(inner) => {
                let mut out = Vec::new();
                for s in solutions {
                    let extended = eval_group(ctx, inner, vec![s.clone()])?;
                    if extended.is_empty() {
                        out.push(s);
                    } else {
                        out.extend(extended);
                    }
                }
                out
            }
        };
    }
    Ok(solutions)
}

/// Resolves a pattern position against a solution: a fixed term to match,
/// or a slot to bind.
enum Position {
    Fixed(Term),
    Bind(usize),
}

fn position(
    ctx: &Context<'_>,
    term: &PatternTerm,
    solution: &Solution,
    as_property: bool,
) -> Result<Position, SparqlError> {
    match term {
        PatternTerm::Var(v) => {
            let slot = ctx.slot(v);
            Ok(match &solution[slot] {
                Some(t) => Position::Fixed(t.clone()),
                None => Position::Bind(slot),
            })
        }
        other => ctx.constant(other, as_property).map(Position::Fixed),
    }
}

fn match_triple(
    ctx: &Context<'_>,
    pattern: &TriplePattern,
    solution: &Solution,
    out: &mut Vec<Solution>,
) -> Result<(), SparqlError> {
    let subject = position(ctx, &pattern.subject, solution, false)?;
    let predicate = position(ctx, &pattern.predicate, solution, true)?;
    let object = position(ctx, &pattern.object, solution, false)?;

    let subjects: Vec<&EntityId> = match &subject {
        Position::Fixed(Term::Value(Value::Entity(id))) => {
            if ctx.graph.entity(id).is_none() {
                return Ok(());
            }
            vec![id]
        }
        // A literal or property cannot be a subject.
        Position::Fixed(_) => return Ok(()),
        Position::Bind(_) => ctx.graph.entities().map(|e| &e.id).collect(),
    };

    for subject_id in subjects {
        let outgoing = ctx.graph.outgoing_of(subject_id).unwrap_or(&[]);
        for (prop, value) in outgoing {
            let mut candidate = solution.clone();
            if let Position::Bind(slot) = subject {
                candidate[slot] = Some(Term::Value(Value::Entity(subject_id.clone())));
            }
            if !unify(&predicate, Term::Property(prop.clone()), &mut candidate) {
                continue;
            }
            if !unify(&object, Term::Value(value.clone()), &mut candidate) {
                continue;
            }
            out.push(candidate);
        }
    }
    Ok(())
}

fn unify(position: &Position, actual: Term, candidate: &mut Solution) -> bool {
    match position {
        Position::Fixed(t) => *t == actual,
        Position::Bind(slot) => match &candidate[*slot] {
            // The same variable may appear twice in one pattern.
            Some(existing) => *existing == actual,
            None => {
                candidate[*slot] = Some(actual);
                true
            }
        },
    }
}

fn project(
    ctx: &Context<'_>,
    query: &SelectQuery,
    solutions: Vec<Solution>,
) -> Result<BindingTable, SparqlError> {
    let variables = query.variables();
    let Some(projections) = &query.projections else {
        let slots: Vec<usize> = variables.iter().map(|v| ctx.slot(v)).collect();
        let rows = solutions
            .into_iter()
            .map(|s| slots.iter().map(|&i| s[i].clone()).collect())
            .collect();
        return Ok(BindingTable { variables, rows });
    };

    let aggregated = projections
        .iter()
        .any(|p| matches!(p, Projection::Aggregate { .. }));
    if !aggregated && query.group_by.is_empty() {
        let slots: Vec<usize> = variables.iter().map(|v| ctx.slot(v)).collect();
        let rows = solutions
            .into_iter()
            .map(|s| slots.iter().map(|&i| s[i].clone()).collect())
            .collect();
        return Ok(BindingTable { variables, rows });
    }

    // Groups in order of first appearance.
    let key_slots: Vec<usize> = query.group_by.iter().map(|v| ctx.slot(v)).collect();
    let mut groups: Vec<(Vec<Option<Term>>, Vec<Solution>)> = Vec::new();
    for s in solutions {
        let key: Vec<Option<Term>> = key_slots.iter().map(|&i| s[i].clone()).collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(s),
            None => groups.push((key, vec![s])),
        }
    }
    // Without GROUP BY, aggregation runs over a single (possibly empty) group.
    if query.group_by.is_empty() && groups.is_empty() {
        groups.push((Vec::new(), Vec::new()));
    }

    let mut table = BindingTable::new(variables);
    for (key, members) in groups {
        let mut row = Vec::with_capacity(projections.len());
        for p in projections {
            row.push(match p {
                Projection::Var(v) => {
                    let i = query.group_by.iter().position(|g| g == v).expect("checked");
                    key[i].clone()
                }
                Projection::Aggregate {
                    function, argument, ..
                } => {
                    let values: Vec<&Term> = match argument {
                        Some(arg) => {
                            let slot = ctx.slot(arg);
                            members.iter().filter_map(|m| m[slot].as_ref()).collect()
                        }
                        None => Vec::new(),
                    };
                    let count = if argument.is_some() {
                        values.len()
                    } else {
                        members.len()
                    };
                    aggregate(*function, &values, count)
                }
            });
        }
        table.rows.push(row);
    }
    Ok(table)
}

fn aggregate(function: AggregateFn, values: &[&Term], count: usize) -> Option<Term> {
    let number = |x: f64| Value::number(x).map(Term::Value);
    match function {
        AggregateFn::Count => number(count as f64),
        AggregateFn::Min | AggregateFn::Max => {
            let want = if function == AggregateFn::Min {
                Ordering::Less
            } else {
                Ordering::Greater
            };
            let mut best: Option<&Term> = None;
            for &v in values {
                best = match best {
                    None => Some(v),
                    Some(b) if term_cmp(v, b) == want => Some(v),
                    keep => keep,
                };
            }
            best.cloned()
        }
        AggregateFn::Sum | AggregateFn::Avg => {
            let mut total = 0.0;
            for v in values {
                total += v.as_value()?.as_f64()?;
            }
            if function == AggregateFn::Sum {
                number(total)
            } else if values.is_empty() {
                number(0.0)
            } else {
                number(total / values.len() as f64)
            }
        }
    }
}

fn term_cmp(a: &Term, b: &Term) -> Ordering {
    match (a, b) {
        (Term::Value(x), Term::Value(y)) => x.total_cmp(y),
        (Term::Property(x), Term::Property(y)) => x.cmp(y),
        (Term::Property(_), Term::Value(_)) => Ordering::Less,
        (Term::Value(_), Term::Property(_)) => Ordering::Greater,
    }
}
