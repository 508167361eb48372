use super::lexer::{tokenize, Tok};
use super::{
    AggregateFn, GroupItem, LiteralValue, PatternTerm, Projection, SelectQuery, SparqlError,
    TriplePattern,
};

/// Keywords that belong to SPARQL but not to the supported subset.
const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "FILTER",
    "UNION",
    "MINUS",
    "BIND",
    "SERVICE",
    "GRAPH",
    "ORDER",
    "OFFSET",
    "HAVING",
    "DISTINCT",
    "REDUCED",
    "CONSTRUCT",
    "ASK",
    "DESCRIBE",
    "FROM",
    "NAMED",
    "EXISTS",
    "NOT",
    "SAMPLE",
    "GROUP_CONCAT",
    "BASE",
    "INSERT",
    "DELETE",
    "LOAD",
    "CLEAR",
];

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

pub fn parse(text: &str) -> Result<SelectQuery, SparqlError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    p.query()
}

fn keyword(tok: &Tok) -> Option<String> {
    match tok {
        Tok::Word(w) => Some(w.to_ascii_uppercase()),
        _ => None,
    }
}

fn is_unsupported_keyword(tok: &Tok) -> bool {
    keyword(tok).is_some_and(|k| UNSUPPORTED_KEYWORDS.contains(&k.as_str()))
}

fn local_name(iri: &str) -> &str {
    iri.rsplit(['/', '#']).next().unwrap_or(iri)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn parse_err(&self, reason: impl Into<String>) -> SparqlError {
        SparqlError::Parse {
            position: self.pos,
            reason: reason.into(),
        }
    }

    /// An unexpected token: either outside the subset or plain malformed.
    fn unexpected(&self, tok: Option<&Tok>, wanted: &str) -> SparqlError {
        match tok {
            Some(t @ (Tok::Other(_) | Tok::Star)) => SparqlError::Unsupported(t.describe()),
            Some(t) if is_unsupported_keyword(t) => SparqlError::Unsupported(t.describe()),
            Some(t) => self.parse_err(format!("expected {wanted}, found {}", t.describe())),
            None => self.parse_err(format!("expected {wanted}, found end of query")),
        }
    }

    fn expect(&mut self, want: Tok, wanted: &str) -> Result<(), SparqlError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(self.peek(), wanted))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().and_then(keyword).is_some_and(|k| k == kw)
    }

    fn query(&mut self) -> Result<SelectQuery, SparqlError> {
        while self.at_keyword("PREFIX") {
            self.pos += 1;
            match self.next() {
                Some(Tok::PName(_, local)) if local.is_empty() => {}
                other => return Err(self.unexpected(other.as_ref(), "prefix name")),
            }
            match self.next() {
                Some(Tok::Iri(_)) => {}
                other => return Err(self.unexpected(other.as_ref(), "IRI")),
            }
        }
        if !self.at_keyword("SELECT") {
            return Err(self.unexpected(self.peek(), "SELECT"));
        }
        self.pos += 1;

        let projections = if self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            None
        } else {
            Some(self.projections()?)
        };

        if self.at_keyword("WHERE") {
            self.pos += 1;
        }
        self.expect(Tok::LBrace, "{")?;
        let pattern = self.group()?;

        let mut group_by = Vec::new();
        if self.at_keyword("GROUP") {
            self.pos += 1;
            if !self.at_keyword("BY") {
                return Err(self.unexpected(self.peek(), "BY"));
            }
            self.pos += 1;
            while let Some(Tok::Var(v)) = self.peek() {
                group_by.push(v.clone());
                self.pos += 1;
            }
            if group_by.is_empty() {
                return Err(self.unexpected(self.peek(), "GROUP BY variable"));
            }
        }

        let mut limit = None;
        if self.at_keyword("LIMIT") {
            self.pos += 1;
            match self.next() {
                Some(Tok::Num(n)) => {
                    limit = Some(n.parse().map_err(|_| self.parse_err("bad LIMIT"))?);
                }
                other => return Err(self.unexpected(other.as_ref(), "LIMIT count")),
            }
        }

        if let Some(t) = self.peek() {
            return Err(self.unexpected(Some(t), "end of query"));
        }

        let query = SelectQuery {
            projections,
            pattern,
            group_by,
            limit,
        };
        check_grouping(&query)?;
        Ok(query)
    }

    fn projections(&mut self) -> Result<Vec<Projection>, SparqlError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Var(v)) => {
                    out.push(Projection::Var(v.clone()));
                    self.pos += 1;
                }
                Some(Tok::LParen) => {
                    self.pos += 1;
                    out.push(self.aggregate()?);
                }
                _ => break,
            }
        }
        if out.is_empty() {
            return Err(self.unexpected(self.peek(), "projection"));
        }
        Ok(out)
    }

    fn aggregate(&mut self) -> Result<Projection, SparqlError> {
        let function = match self.peek().and_then(keyword).as_deref() {
            Some("COUNT") => AggregateFn::Count,
            Some("MIN") => AggregateFn::Min,
            Some("MAX") => AggregateFn::Max,
            Some("SUM") => AggregateFn::Sum,
            Some("AVG") => AggregateFn::Avg,
            _ => {
                let t = self.peek().cloned();
                return Err(match t {
                    Some(t @ Tok::Word(_)) => SparqlError::Unsupported(t.describe()),
                    other => self.unexpected(other.as_ref(), "aggregate function"),
                });
            }
        };
        self.pos += 1;
        self.expect(Tok::LParen, "(")?;
        let argument = match self.next() {
            Some(Tok::Var(v)) => Some(v),
            Some(Tok::Star) if function == AggregateFn::Count => None,
            other => return Err(self.unexpected(other.as_ref(), "aggregate argument")),
        };
        self.expect(Tok::RParen, ")")?;
        if !self.at_keyword("AS") {
            return Err(self.unexpected(self.peek(), "AS"));
        }
        self.pos += 1;
        let alias = match self.next() {
            Some(Tok::Var(v)) => v,
            other => return Err(self.unexpected(other.as_ref(), "alias variable")),
        };
        self.expect(Tok::RParen, ")")?;
        Ok(Projection::Aggregate {
            function,
            argument,
            alias,
        })
    }

    /// Parses group items up to and including the closing brace.
    fn group(&mut self) -> Result<Vec<GroupItem>, SparqlError> {
        let mut items = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    return Ok(items);
                }
                Some(Tok::Dot) => {
                    self.pos += 1;
                }
                Some(t) if keyword(t).as_deref() == Some("VALUES") => {
                    self.pos += 1;
                    items.push(self.values()?);
                }
                Some(t) if keyword(t).as_deref() == Some("OPTIONAL") => {
                    self.pos += 1;
                    self.expect(Tok::LBrace, "{")?;
                    items.push(GroupItem::Optional(self.group()?));
                }
                Some(Tok::LBrace) => {
                    return Err(SparqlError::Unsupported("nested group".into()));
                }
                Some(_) => {
                    items.push(GroupItem::Triple(self.triple()?));
                    match self.peek() {
                        Some(Tok::Dot) | Some(Tok::RBrace) => {}
                        Some(Tok::Other(s)) if s == ";" || s == "," => {
                            return Err(SparqlError::Unsupported(s.clone()));
                        }
                        Some(t) if keyword(t).is_some_and(|k| k == "VALUES" || k == "OPTIONAL") => {
                        }
                        other => return Err(self.unexpected(other, ". or }")),
                    }
                }
                None => return Err(self.parse_err("unterminated group")),
            }
        }
    }

    fn values(&mut self) -> Result<GroupItem, SparqlError> {
        let mut variables = Vec::new();
        let multi = match self.next() {
            Some(Tok::Var(v)) => {
                variables.push(v);
                false
            }
            Some(Tok::LParen) => {
                while let Some(Tok::Var(v)) = self.peek() {
                    variables.push(v.clone());
                    self.pos += 1;
                }
                self.expect(Tok::RParen, ")")?;
                true
            }
            other => return Err(self.unexpected(other.as_ref(), "VALUES variable")),
        };
        self.expect(Tok::LBrace, "{")?;
        let mut rows = Vec::new();
        loop {
            if self.peek() == Some(&Tok::RBrace) {
                self.pos += 1;
                break;
            }
            if multi {
                self.expect(Tok::LParen, "(")?;
                let mut row = Vec::new();
                while self.peek() != Some(&Tok::RParen) {
                    row.push(self.values_term()?);
                }
                self.pos += 1;
                if row.len() != variables.len() {
                    return Err(self.parse_err("VALUES row width mismatch"));
                }
                rows.push(row);
            } else {
                rows.push(vec![self.values_term()?]);
            }
        }
        Ok(GroupItem::Values { variables, rows })
    }

    fn values_term(&mut self) -> Result<Option<PatternTerm>, SparqlError> {
        if self.at_keyword("UNDEF") {
            self.pos += 1;
            return Ok(None);
        }
        match self.term()? {
            PatternTerm::Var(v) => Err(self.parse_err(format!("variable ?{v} inside VALUES"))),
            t => Ok(Some(t)),
        }
    }

    fn triple(&mut self) -> Result<TriplePattern, SparqlError> {
        let subject = self.term()?;
        if matches!(subject, PatternTerm::Literal(_)) {
            return Err(self.parse_err("literal in subject position"));
        }
        // `a` is shorthand for rdf:type, which has no counterpart here.
        if self.at_keyword("A") {
            return Err(SparqlError::Unsupported("a".into()));
        }
        let predicate = self.term()?;
        if matches!(predicate, PatternTerm::Literal(_)) {
            return Err(self.parse_err("literal in predicate position"));
        }
        // Property paths (`P1/P2`, `P1*`, `^P1`) are outside the subset.
        if let Some(t @ (Tok::Other(_) | Tok::Star)) = self.peek() {
            return Err(SparqlError::Unsupported(t.describe()));
        }
        let object = self.term()?;
        Ok(TriplePattern {
            subject,
            predicate,
            object,
        })
    }

    fn term(&mut self) -> Result<PatternTerm, SparqlError> {
        let tok = self.next();
        match tok {
            Some(Tok::Var(v)) => Ok(PatternTerm::Var(v)),
            Some(Tok::PName(_, local)) => Ok(PatternTerm::Node(local)),
            Some(Tok::Iri(iri)) => Ok(PatternTerm::Node(local_name(&iri).to_string())),
            Some(Tok::Num(n)) => Ok(PatternTerm::Literal(LiteralValue::Number(n))),
            Some(Tok::Str(s)) => self.literal_suffix(s),
            Some(ref t @ Tok::Word(ref w)) => {
                if is_unsupported_keyword(t)
                    || matches!(w.to_ascii_lowercase().as_str(), "true" | "false")
                {
                    Err(SparqlError::Unsupported(w.clone()))
                } else if keyword(t).is_some_and(|k| {
                    matches!(
                        k.as_str(),
                        "SELECT" | "WHERE" | "VALUES" | "OPTIONAL" | "GROUP" | "LIMIT" | "PREFIX"
                    )
                }) {
                    Err(self.parse_err(format!("unexpected keyword {w}")))
                } else {
                    Ok(PatternTerm::Node(w.clone()))
                }
            }
            other => {
                self.pos -= 1;
                Err(self.unexpected(other.as_ref(), "term"))
            }
        }
    }

    fn literal_suffix(&mut self, s: String) -> Result<PatternTerm, SparqlError> {
        match self.peek() {
            Some(Tok::LangTag(_)) => {
                self.pos += 1;
                Ok(PatternTerm::Literal(LiteralValue::Text(s)))
            }
            Some(Tok::Caret2) => {
                self.pos += 1;
                let datatype = match self.next() {
                    Some(Tok::PName(_, local)) => local,
                    Some(Tok::Iri(iri)) => local_name(&iri).to_string(),
                    other => return Err(self.unexpected(other.as_ref(), "datatype")),
                };
                match datatype.as_str() {
                    "dateTime" | "date" => Ok(PatternTerm::Literal(LiteralValue::DateTime(s))),
                    "decimal" | "integer" | "double" | "float" | "int" | "long" => {
                        Ok(PatternTerm::Literal(LiteralValue::Number(s)))
                    }
                    "string" => Ok(PatternTerm::Literal(LiteralValue::Text(s))),
                    other => Err(SparqlError::Unsupported(format!("datatype {other}"))),
                }
            }
            _ => Ok(PatternTerm::Literal(LiteralValue::Text(s))),
        }
    }
}

/// Non-aggregated projected variables must be grouped once aggregation is in play.
fn check_grouping(query: &SelectQuery) -> Result<(), SparqlError> {
    let Some(projections) = &query.projections else {
        if !query.group_by.is_empty() {
            return Err(SparqlError::Parse {
                position: 0,
                reason: "SELECT * with GROUP BY".into(),
            });
        }
        return Ok(());
    };
    let aggregated = projections
        .iter()
        .any(|p| matches!(p, Projection::Aggregate { .. }));
    if !aggregated && query.group_by.is_empty() {
        return Ok(());
    }
    for p in projections {
        if let Projection::Var(v) = p {
            if !query.group_by.contains(v) {
                return Err(SparqlError::Parse {
                    position: 0,
                    reason: format!("?{v} is projected but not grouped"),
                });
            }
        }
    }
    Ok(())
}
