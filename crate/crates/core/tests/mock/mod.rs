//! An in-process stand-in for a Wikidata-style deployment: a SPARQL
//! endpoint at `/sparql` and the action API at `/api.php`, both answered
//! from a fixture graph.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicU16, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::{Form, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use kgforage::graph_store::{self, Datatype, EntityId, KnowledgeGraph, PropertyId};
use kgforage::kg_client::to_sparql_json;
use serde_json::{json, Map, Value as Json};

#[derive(Clone)]
struct Shared {
    graph: Arc<KnowledgeGraph>,
    /// When non-zero every SPARQL request answers with this status.
    forced_status: Arc<AtomicU16>,
    sparql_requests: Arc<AtomicUsize>,
}

pub struct MockRemote {
    pub base: String,
    forced_status: Arc<AtomicU16>,
    sparql_requests: Arc<AtomicUsize>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockRemote {
    pub fn start(graph: Arc<KnowledgeGraph>) -> Self {
        let forced_status = Arc::new(AtomicU16::new(0));
        let sparql_requests = Arc::new(AtomicUsize::new(0));
        let shared = Shared {
            graph,
            forced_status: forced_status.clone(),
            sparql_requests: sparql_requests.clone(),
        };
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route("/sparql", post(sparql))
                    .route("/api.php", get(action_api))
                    .with_state(shared);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        MockRemote {
            base: format!("http://{addr}"),
            forced_status,
            sparql_requests,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn sparql_url(&self) -> String {
        format!("{}/sparql", self.base)
    }

    pub fn api_url(&self) -> String {
        format!("{}/api.php", self.base)
    }

    pub fn force_status(&self, status: u16) {
        self.forced_status.store(status, Ordering::SeqCst);
    }

    pub fn sparql_requests(&self) -> usize {
        self.sparql_requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockRemote {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn sparql(State(s): State<Shared>, Form(form): Form<HashMap<String, String>>) -> Response {
    s.sparql_requests.fetch_add(1, Ordering::SeqCst);
    let forced = s.forced_status.load(Ordering::SeqCst);
    if forced != 0 {
        return (StatusCode::from_u16(forced).unwrap(), "forced failure").into_response();
    }
    let Some(query) = form.get("query") else {
        return (StatusCode::BAD_REQUEST, "missing query").into_response();
    };
    match graph_store::execute_select(&s.graph, query) {
        Ok(table) => (
            [(header::CONTENT_TYPE, "application/sparql-results+json")],
            to_sparql_json(&table),
        )
            .into_response(),
        Err(e) => (
            StatusCode::BAD_REQUEST,
            format!("MalformedQueryException: {e}"),
        )
            .into_response(),
    }
}

fn en(text: &str) -> Json {
    json!({"en": {"language": "en", "value": text}})
}

async fn action_api(
    State(s): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
) -> axum::Json<Json> {
    let g = &s.graph;
    let body = match params.get("action").map(String::as_str) {
        Some("wbsearchentities") => {
            let text = params.get("search").cloned().unwrap_or_default();
            let hits: Vec<Json> = graph_store::search_entities(g, &text)
                .into_iter()
                .take(10)
                .map(|h| json!({"id": h.id.as_str(), "label": h.label, "description": h.description}))
                .collect();
            json!({"search": hits})
        }
        Some("wbgetentities") => {
            let mut entities = Map::new();
            for id in params
                .get("ids")
                .map(String::as_str)
                .unwrap_or("")
                .split('|')
            {
                let found = PropertyId::new(id)
                    .and_then(|p| g.property(&p))
                    .map(|p| {
                        let datatype = match p.datatype {
                            Datatype::Number => "quantity",
                            Datatype::Datetime => "time",
                            Datatype::Entity => "wikibase-item",
                            Datatype::String => "string",
                        };
                        json!({"labels": en(&p.label), "descriptions": en(&p.description), "datatype": datatype})
                    })
                    .or_else(|| {
                        EntityId::new(id)
                            .and_then(|e| g.entity(&e))
                            .map(|e| json!({"labels": en(&e.label)}))
                    })
                    .unwrap_or_else(|| json!({"id": id, "missing": ""}));
                entities.insert(id.to_string(), found);
            }
            json!({"entities": entities})
        }
        _ => json!({"error": {"code": "badvalue", "info": "unrecognised action"}}),
    };
    axum::Json(body)
}
