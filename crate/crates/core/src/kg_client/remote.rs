//! SPARQL 1.1 protocol client plus the Wikidata action API for entity search
//! and property/label metadata.

use std::collections::HashMap;
use std::time::Duration;

use serde_json::{json, Map, Value as Json};

use super::{ClientError, GraphBackend};
use crate::graph_store::{
    BindingTable, Datatype, Decimal, EntityId, PropertyId, PropertyMeta, SearchHit, Term,
    Timestamp, Value,
};
use crate::query_gen::{Dialect, SparqlText};

pub const WIKIDATA_ENTITY_SEARCH_URL: &str = "https://www.wikidata.org/w/api.php";

const ENTITY_BASE: &str = "http://www.wikidata.org/entity/";
const DIRECT_PROP_BASE: &str = "http://www.wikidata.org/prop/direct/";
const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
const SPARQL_JSON: &str = "application/sparql-results+json";
/// wbgetentities accepts at most this many ids per call.
const METADATA_BATCH: usize = 50;

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    http: reqwest::blocking::Client,
    sparql_url: String,
    search_url: String,
}

impl RemoteBackend {
    pub fn new(sparql_url: &str, search_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("kgforage/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| ClientError::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            http,
            sparql_url: sparql_url.to_string(),
            search_url: search_url.to_string(),
        })
    }

    fn action_api(&self, params: &[(&str, &str)]) -> Result<Json, ClientError> {
        let response = self
            .http
            .get(&self.search_url)
            .query(params)
            .query(&[("format", "json")])
            .send()
            .map_err(transport_error)?;
        let status = response.status();
        let body = response.text().map_err(transport_error)?;
        if !status.is_success() {
            return Err(status_error(status, body));
        }
        let json: Json = serde_json::from_str(&body)
            .map_err(|e| ClientError::unavailable(format!("malformed API response: {e}")))?;
        if let Some(err) = json.get("error") {
            return Err(ClientError::rejected(err.to_string()));
        }
        Ok(json)
    }

    fn get_entities(&self, ids: &[&str], props: &str) -> Result<Map<String, Json>, ClientError> {
        let mut all = Map::new();
        for chunk in ids.chunks(METADATA_BATCH) {
            let joined = chunk.join("|");
            let json = self.action_api(&[
                ("action", "wbgetentities"),
                ("ids", &joined),
                ("props", props),
                ("languages", "en"),
            ])?;
            if let Some(Json::Object(entities)) = json.get("entities") {
                for (k, v) in entities {
                    if v.get("missing").is_none() {
                        all.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        Ok(all)
    }
}

fn transport_error(e: reqwest::Error) -> ClientError {
    ClientError::unavailable(e.to_string())
}

fn status_error(status: reqwest::StatusCode, body: String) -> ClientError {
    if status.is_client_error() && status != reqwest::StatusCode::TOO_MANY_REQUESTS {
        ClientError::rejected(format!("{status}: {}", body.trim()))
    } else {
        ClientError::unavailable(format!("{status}: {}", body.trim()))
    }
}

fn en_text(entity: &Json, field: &str) -> Option<String> {
    entity
        .get(field)?
        .get("en")?
        .get("value")?
        .as_str()
        .map(str::to_string)
}

fn wikibase_datatype(datatype: &str) -> Datatype {
    match datatype {
        "quantity" => Datatype::Number,
        "time" => Datatype::Datetime,
        d if d.starts_with("wikibase-") => Datatype::Entity,
        _ => Datatype::String,
    }
}

impl GraphBackend for RemoteBackend {
    fn dialect(&self) -> Dialect {
        Dialect::Wikidata
    }

    fn search(&self, text: &str) -> Result<Vec<SearchHit>, ClientError> {
        let json = self.action_api(&[
            ("action", "wbsearchentities"),
            ("search", text),
            ("language", "en"),
            ("uselang", "en"),
            ("type", "item"),
            ("limit", "10"),
        ])?;
        let hits = json
            .get("search")
            .and_then(Json::as_array)
            .map(|hits| {
                hits.iter()
                    .filter_map(|h| {
                        let id = EntityId::new(h.get("id")?.as_str()?)?;
                        let label = h
                            .get("label")
                            .and_then(Json::as_str)
                            .unwrap_or(id.as_str())
                            .to_string();
                        let description = h
                            .get("description")
                            .and_then(Json::as_str)
                            .unwrap_or_default()
                            .to_string();
                        Some(SearchHit {
                            id,
                            label,
                            description,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(hits)
    }

    fn select(&self, query: &SparqlText) -> Result<BindingTable, ClientError> {
        let response = self
            .http
            .post(&self.sparql_url)
            .header(reqwest::header::ACCEPT, SPARQL_JSON)
            .form(&[("query", query.text.as_str())])
            .send()
            .map_err(transport_error)?;
        let status = response.status();
        let body = response.text().map_err(transport_error)?;
        if !status.is_success() {
            return Err(status_error(status, body));
        }
        parse_sparql_json(&body)
            .map_err(|e| ClientError::unavailable(format!("malformed SPARQL results: {e}")))
    }

    fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError> {
        let wanted: Vec<&str> = ids.iter().map(PropertyId::as_str).collect();
        let entities = self.get_entities(&wanted, "labels|descriptions|datatype")?;
        Ok(ids
            .iter()
            .filter_map(|id| {
                let e = entities.get(id.as_str())?;
                Some(PropertyMeta {
                    id: id.clone(),
                    label: en_text(e, "labels").unwrap_or_else(|| id.to_string()),
                    description: en_text(e, "descriptions").unwrap_or_default(),
                    datatype: wikibase_datatype(
                        e.get("datatype").and_then(Json::as_str).unwrap_or("string"),
                    ),
                    unit: None,
                })
            })
            .collect())
    }

    fn entity_labels(&self, ids: &[EntityId]) -> Result<HashMap<EntityId, String>, ClientError> {
        let wanted: Vec<&str> = ids.iter().map(EntityId::as_str).collect();
        let entities = self.get_entities(&wanted, "labels")?;
        Ok(ids
            .iter()
            .filter_map(|id| {
                let label = en_text(entities.get(id.as_str())?, "labels")?;
                Some((id.clone(), label))
            })
            .collect())
    }
}

fn term_from_json(binding: &Json) -> Result<Term, String> {
    let kind = binding
        .get("type")
        .and_then(Json::as_str)
        .ok_or("binding without type")?;
    let value = binding
        .get("value")
        .and_then(Json::as_str)
        .ok_or("binding without value")?;
    Ok(match kind {
        "uri" => {
            if let Some(p) = value.strip_prefix(DIRECT_PROP_BASE) {
                Term::Property(PropertyId::new(p).ok_or("empty property IRI")?)
            } else if let Some(e) = value.strip_prefix(ENTITY_BASE) {
                Term::Value(Value::Entity(EntityId::new(e).ok_or("empty entity IRI")?))
            } else {
                Term::Value(Value::Text(value.to_string()))
            }
        }
        "literal" | "typed-literal" => {
            let datatype = binding
                .get("datatype")
                .and_then(Json::as_str)
                .and_then(|d| d.strip_prefix(XSD))
                .unwrap_or("string");
            let parsed = match datatype {
                "decimal" | "integer" | "double" | "float" | "int" | "long" => {
                    Decimal::parse(value).map(Value::Number)
                }
                "dateTime" | "date" => Timestamp::parse(value).map(Value::DateTime),
                _ => None,
            };
            // Values we cannot represent (e.g. BCE dates) degrade to text.
            Term::Value(parsed.unwrap_or_else(|| Value::Text(value.to_string())))
        }
        "bnode" => Term::Value(Value::Text(format!("_:{value}"))),
        other => return Err(format!("unknown binding type {other}")),
    })
}

/// Parses the SPARQL 1.1 JSON results format.
pub fn parse_sparql_json(body: &str) -> Result<BindingTable, String> {
    let json: Json = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let variables: Vec<String> = json
        .pointer("/head/vars")
        .and_then(Json::as_array)
        .ok_or("missing head.vars")?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or("non-string variable"))
        .collect::<Result<_, _>>()?;
    let bindings = json
        .pointer("/results/bindings")
        .and_then(Json::as_array)
        .ok_or("missing results.bindings")?;
    let mut table = BindingTable::new(variables);
    for b in bindings {
        let obj = b.as_object().ok_or("binding is not an object")?;
        let row = table
            .variables
            .iter()
            .map(|v| obj.get(v).map(term_from_json).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        table.rows.push(row);
    }
    Ok(table)
}

fn term_to_json(term: &Term) -> Json {
    match term {
        Term::Property(p) => json!({"type": "uri", "value": format!("{DIRECT_PROP_BASE}{p}")}),
        Term::Value(Value::Entity(e)) => {
            json!({"type": "uri", "value": format!("{ENTITY_BASE}{e}")})
        }
        Term::Value(Value::Number(d)) => json!({
            "type": "literal",
            "datatype": format!("{XSD}decimal"),
            "value": d.as_str(),
        }),
        Term::Value(Value::DateTime(t)) => json!({
            "type": "literal",
            "datatype": format!("{XSD}dateTime"),
            "value": t.as_str(),
        }),
        Term::Value(Value::Text(s)) => json!({"type": "literal", "value": s}),
    }
}

/// Renders a table in the SPARQL 1.1 JSON results format, using Wikidata
/// IRIs for entities and properties.
pub fn to_sparql_json(table: &BindingTable) -> String {
    let bindings: Vec<Json> = table
        .rows
        .iter()
        .map(|row| {
            let mut obj = Map::new();
            for (var, term) in table.variables.iter().zip(row) {
                if let Some(t) = term {
                    obj.insert(var.clone(), term_to_json(t));
                }
            }
            Json::Object(obj)
        })
        .collect();
    json!({"head": {"vars": table.variables}, "results": {"bindings": bindings}}).to_string()
}
