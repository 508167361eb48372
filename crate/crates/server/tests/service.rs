#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use common::{fixture, load_graph};
use kgforage::graph_store::{BindingTable, EntityId, PropertyId, PropertyMeta, SearchHit};
use kgforage::kg_client::{BackendConfig, ClientError, GraphBackend, KgClient, LocalBackend};
use kgforage::query_gen::{Dialect, SparqlText};
use kgforage_server::app::{router, AppConfig, AppState};
use serde_json::{json, Value as Json};
use tower::ServiceExt;

const MINI_CSV: &str = "Country\nAtlantis\nBorduria\nCascadia\n";

fn config() -> AppConfig {
    AppConfig::new(BackendConfig::local(fixture("mini_countries.jsonl")))
}

fn app_with(config: AppConfig) -> (Router, Arc<AppState>) {
    let state = AppState::new(config).unwrap();
    (router(state.clone()), state)
}

fn app() -> Router {
    app_with(config()).0
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Json {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|_| panic!("not JSON: {}", String::from_utf8_lossy(&self.body)))
    }

    fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

async fn send(app: &Router, method: Method, uri: &str, content_type: &str, body: Vec<u8>) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = axum::body::to_bytes(res.into_body(), usize::MAX)
        .await
        .unwrap()
        .to_vec();
    Reply {
        status,
        headers,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Method::GET, uri, "application/json", Vec::new()).await
}

async fn post_json(app: &Router, uri: &str, body: Json) -> Reply {
    send(
        app,
        Method::POST,
        uri,
        "application/json",
        body.to_string().into_bytes(),
    )
    .await
}

async fn upload(app: &Router, csv: &str) -> String {
    let r = send(
        app,
        Method::POST,
        "/sessions",
        "text/csv",
        csv.as_bytes().to_vec(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    r.json()["session"].as_str().unwrap().to_string()
}

fn mean_population() -> Json {
    json!({"source_column": "Country", "hops": [{"property": "P1", "agg": "mean"}]})
}

fn borders_life(outer: &str, inner: &str) -> Json {
    json!({"source_column": "Country", "hops": [
        {"property": "P2", "agg": "through", "combine": outer},
        {"property": "P3", "agg": inner}
    ]})
}

#[tokio::test]
async fn create_session_examples() {
    let app = app();
    let r = send(&app, Method::POST, "/sessions", "text/csv", MINI_CSV.into()).await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(
        v["columns"],
        json!([{"name": "Country", "type": "string", "enabled": true, "augmented": false}])
    );
    assert_eq!(v["row_count"], 3);

    let ragged = send(
        &app,
        Method::POST,
        "/sessions",
        "text/csv",
        b"a,b\n1,2\n3\n".to_vec(),
    )
    .await;
    assert_eq!(ragged.status, StatusCode::BAD_REQUEST);
    assert_eq!(ragged.json()["error"], "CsvError");
    assert!(ragged.json()["message"].as_str().unwrap().contains("row 3"));

    let a = upload(&app, MINI_CSV).await;
    let b = upload(&app, MINI_CSV).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn multipart_upload_and_options() {
    let app = app();
    let boundary = "XbOuNdArY";
    let body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"delimiter\"\r\n\r\ntab\r\n\
         --{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"my data.tsv\"\r\nContent-Type: text/tab-separated-values\r\n\r\n\
         Country\tn\nAtlantis\t1\n\r\n--{boundary}--\r\n"
    );
    let r = send(
        &app,
        Method::POST,
        "/sessions",
        &format!("multipart/form-data; boundary={boundary}"),
        body.into_bytes(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let v = r.json();
    assert_eq!(v["columns"][1]["type"], "number");
    let id = v["session"].as_str().unwrap();
    let export = get(&app, &format!("/sessions/{id}/export")).await;
    assert_eq!(
        export.headers[header::CONTENT_DISPOSITION],
        "attachment; filename=\"mydata.csv\""
    );
    assert_eq!(export.text(), "Country,n\nAtlantis,1\n");
}

#[tokio::test]
async fn upload_size_limit() {
    let (app, _) = app_with(AppConfig {
        max_upload_bytes: 64,
        ..config()
    });
    let big = format!("Country\n{}", "Atlantis\n".repeat(20));
    let r = send(
        &app,
        Method::POST,
        "/sessions",
        "text/csv",
        big.into_bytes(),
    )
    .await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(r.json()["error"], "TooLarge");
}

#[tokio::test]
async fn related_examples() {
    let app = app();
    let id = upload(&app, "Country,n\nAtlantis,1\nBorduria,2\nCascadia,3\n").await;
    let r = get(
        &app,
        &format!("/sessions/{id}/columns/Country/related?seed=7"),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let list = r.json();
    let population = list
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["label"] == "population")
        .unwrap();
    assert!((population["coverage"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
    let order: Vec<&str> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["property"].as_str().unwrap())
        .collect();
    assert_eq!(order, ["P2", "P3", "P1"]);

    let numeric = get(&app, &format!("/sessions/{id}/columns/n/related")).await;
    assert_eq!(numeric.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(numeric.json()["error"], "NotAStringColumn");
    assert_eq!(
        get(&app, "/sessions/nope/columns/Country/related")
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, &format!("/sessions/{id}/columns/Nope/related"))
            .await
            .status,
        StatusCode::NOT_FOUND
    );

    let detail = get(
        &app,
        &format!("/sessions/{id}/columns/Country/detail?property=P1"),
    )
    .await;
    assert_eq!(detail.status, StatusCode::OK);
    let v = detail.json();
    assert_eq!(v["descriptor"]["label"], "population");
    assert_eq!(v["histogram"]["kind"], "numeric");
    assert_eq!(v["histogram"]["edges"][0], 100.0);
    let categorical = get(
        &app,
        &format!("/sessions/{id}/columns/Country/detail?property=P2&seed=7"),
    )
    .await;
    assert_eq!(categorical.json()["histogram"]["kind"], "categorical");
    let missing = get(
        &app,
        &format!("/sessions/{id}/columns/Country/detail?property=P99"),
    )
    .await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn preview_and_commit() {
    let app = app();
    let id = upload(&app, MINI_CSV).await;
    let before = get(&app, &format!("/sessions/{id}/export")).await.text();
    for _ in 0..3 {
        let p = post_json(
            &app,
            &format!("/sessions/{id}/joins:preview"),
            mean_population(),
        )
        .await;
        assert_eq!(p.status, StatusCode::OK, "{}", p.text());
        let v = p.json();
        assert_eq!(v["values"], json!([200.0, 1000.0, null]));
        assert_eq!(v["null_count"], 1);
    }
    let cols = get(&app, &format!("/sessions/{id}/columns")).await.json();
    assert_eq!(cols["version"], 0);
    assert_eq!(
        get(&app, &format!("/sessions/{id}/export")).await.text(),
        before
    );

    let c = post_json(&app, &format!("/sessions/{id}/joins"), mean_population()).await;
    assert_eq!(c.status, StatusCode::OK, "{}", c.text());
    assert_eq!(c.json()["column"], "mean of population");
    let cols = get(&app, &format!("/sessions/{id}/columns")).await.json();
    let added = &cols["columns"][1];
    assert_eq!(added["augmented"], true);
    assert_eq!(added["parent_column"], "Country");
    assert_eq!(added["plan"]["hops"][0]["property"], "P1");
    assert_eq!(cols["join_history"].as_array().unwrap().len(), 1);

    let invalid = json!({"source_column": "Country", "hops": [
        {"property": "P1", "agg": "mean"}, {"property": "P3", "agg": "max"}
    ]});
    let r = post_json(&app, &format!("/sessions/{id}/joins"), invalid).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "PlanError");
    assert_eq!(r.json()["errors"][0]["hop_index"], 0);
    let malformed = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/joins"),
        "application/json",
        b"{".to_vec(),
    )
    .await;
    assert!(malformed.status.is_client_error());
}

#[tokio::test]
async fn subgraph_examples() {
    let app = app();
    let id = upload(&app, MINI_CSV).await;
    let uri = format!("/sessions/{id}/subgraph");
    let r = post_json(
        &app,
        &uri,
        json!({"plan": borders_life("min", "max"), "row": 0}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["computed_result"], 65.0);
    assert_eq!(r.json()["root"]["label"], "Atlantis");
    let r = post_json(
        &app,
        &format!("{uri}?ops=max,mean"),
        json!({"plan": borders_life("min", "max")}),
    )
    .await;
    assert_eq!(r.json()["computed_result"], 80.0);
    assert_eq!(r.json()["ops"], json!(["max", "mean"]));
    let shallow = json!({"plan": mean_population(), "row": 0});
    assert_eq!(
        post_json(&app, &uri, shallow).await.status,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let wrong_arity = post_json(
        &app,
        &format!("{uri}?ops=max"),
        json!({"plan": borders_life("min", "max")}),
    )
    .await;
    assert_eq!(wrong_arity.status, StatusCode::UNPROCESSABLE_ENTITY);
    let bad_op = post_json(
        &app,
        &format!("{uri}?ops=max,median"),
        json!({"plan": borders_life("min", "max")}),
    )
    .await;
    assert_eq!(bad_op.status, StatusCode::BAD_REQUEST);
    let other = post_json(
        &app,
        "/sessions/none/subgraph",
        json!({"plan": borders_life("min", "max")}),
    )
    .await;
    assert_eq!(other.status, StatusCode::NOT_FOUND);
    // Substitutions are not stored anywhere.
    assert_eq!(
        get(&app, &format!("/sessions/{id}/columns")).await.json()["version"],
        0
    );
}

#[tokio::test]
async fn export_examples() {
    let app = app();
    let id = upload(
        &app,
        "Country , x\n Atlantis ,1\nBorduria,\nCascadia,2.50\n",
    )
    .await;
    let fresh = get(&app, &format!("/sessions/{id}/export")).await;
    assert_eq!(
        fresh.headers[header::CONTENT_TYPE],
        "text/csv; charset=utf-8"
    );
    assert_eq!(
        fresh.headers[header::CONTENT_DISPOSITION],
        "attachment; filename=\"dataset.csv\""
    );
    assert_eq!(
        fresh.text(),
        "Country , x\n Atlantis ,1\nBorduria,\nCascadia,2.50\n"
    );

    let id = upload(&app, MINI_CSV).await;
    post_json(&app, &format!("/sessions/{id}/joins"), mean_population()).await;
    let after = get(&app, &format!("/sessions/{id}/export")).await.text();
    assert_eq!(
        after,
        "Country,mean of population\nAtlantis,200\nBorduria,1000\nCascadia,\n"
    );
    let plans = get(&app, &format!("/sessions/{id}/export/plans")).await;
    assert_eq!(plans.json()["columns"][0]["name"], "mean of population");

    let uri = format!("/sessions/{id}/columns/mean%20of%20population");
    let r = send(
        &app,
        Method::PATCH,
        &uri,
        "application/json",
        br#"{"enabled": false}"#.to_vec(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(
        get(&app, &format!("/sessions/{id}/export")).await.text(),
        MINI_CSV
    );
    let rows = get(&app, &format!("/sessions/{id}/preview?n=2"))
        .await
        .json();
    assert_eq!(rows["columns"], json!(["Country"]));
    assert_eq!(rows["rows"], json!([["Atlantis"], ["Borduria"]]));
    let plans = get(&app, &format!("/sessions/{id}/export/plans"))
        .await
        .json();
    assert_eq!(plans["columns"][0]["enabled"], false);
    let missing = send(
        &app,
        Method::PATCH,
        &format!("/sessions/{id}/columns/zzz"),
        "application/json",
        br#"{"enabled": false}"#.to_vec(),
    )
    .await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(
        get(&app, "/sessions/zzz/export").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_commits_are_serialised() {
    let app = app();
    let id = upload(&app, MINI_CSV).await;
    let ops = ["count", "mean", "max", "min", "sum", "variance", "sample"];
    let tasks: Vec<_> = ops
        .iter()
        .map(|op| {
            let app = app.clone();
            let uri = format!("/sessions/{id}/joins");
            let plan = json!({"source_column": "Country", "output_name": "pop", "hops": [{"property": "P1", "agg": op}]});
            tokio::spawn(async move { post_json(&app, &uri, plan).await.status })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let cols = get(&app, &format!("/sessions/{id}/columns")).await.json();
    assert_eq!(cols["version"], ops.len());
    let columns = cols["columns"].as_array().unwrap();
    assert_eq!(columns.len(), ops.len() + 1);
    let history = cols["join_history"].as_array().unwrap();
    // History and columns line up one to one, in order.
    for (col, plan) in columns[1..].iter().zip(history) {
        assert_eq!(&col["plan"], plan);
    }
    let mut seen: Vec<&str> = history
        .iter()
        .map(|p| p["hops"][0]["agg"].as_str().unwrap())
        .collect();
    seen.sort();
    let mut want = ops.to_vec();
    want.sort();
    assert_eq!(seen, want);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = upload(&app, MINI_CSV).await;
    let b = upload(&app, MINI_CSV).await;
    post_json(&app, &format!("/sessions/{a}/joins"), mean_population()).await;
    let cols = get(&app, &format!("/sessions/{b}/columns")).await.json();
    assert_eq!(cols["columns"].as_array().unwrap().len(), 1);
    assert_eq!(
        send(&app, Method::DELETE, &format!("/sessions/{a}"), "", vec![])
            .await
            .status,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        get(&app, &format!("/sessions/{a}/columns")).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, &format!("/sessions/{b}/columns")).await.status,
        StatusCode::OK
    );
}

#[tokio::test]
async fn sessions_expire() {
    let (app, state) = app_with(AppConfig {
        session_ttl: Duration::from_millis(50),
        ..config()
    });
    let id = upload(&app, MINI_CSV).await;
    upload(&app, MINI_CSV).await;
    assert_eq!(
        get(&app, &format!("/sessions/{id}/columns")).await.status,
        StatusCode::OK
    );
    tokio::time::sleep(Duration::from_millis(80)).await;
    assert_eq!(
        get(&app, &format!("/sessions/{id}/columns")).await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(state.sessions.sweep(), 1);
    assert!(state.sessions.is_empty());
}

/// Sleeps before every select; fails them all when `fail` is set.
struct Sluggish {
    inner: LocalBackend,
    delay: Duration,
    fail: bool,
}

impl GraphBackend for Sluggish {
    fn dialect(&self) -> Dialect {
        Dialect::Local
    }
    fn search(&self, text: &str) -> Result<Vec<SearchHit>, ClientError> {
        self.inner.search(text)
    }
    fn select(&self, query: &SparqlText) -> Result<BindingTable, ClientError> {
        std::thread::sleep(self.delay);
        if self.fail {
            return Err(ClientError::unavailable("connection reset"));
        }
        self.inner.select(query)
    }
    fn properties(&self, ids: &[PropertyId]) -> Result<Vec<PropertyMeta>, ClientError> {
        self.inner.properties(ids)
    }
    fn entity_labels(&self, ids: &[EntityId]) -> Result<HashMap<EntityId, String>, ClientError> {
        self.inner.entity_labels(ids)
    }
}

fn sluggish_app(delay: Duration, fail: bool, commit_wait: Duration) -> Router {
    let backend = Sluggish {
        inner: LocalBackend::new(load_graph("mini_countries.jsonl")),
        delay,
        fail,
    };
    let client =
        KgClient::with_backend(Arc::new(backend), &BackendConfig::local("unused")).unwrap();
    let state = AppState::with_client(
        AppConfig {
            commit_wait,
            ..config()
        },
        Arc::new(client),
    );
    router(state)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_commits_return_a_job() {
    let app = sluggish_app(Duration::from_millis(300), false, Duration::from_millis(20));
    let id = upload(&app, MINI_CSV).await;
    let r = post_json(&app, &format!("/sessions/{id}/joins"), mean_population()).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let poll = r.json()["poll"].as_str().unwrap().to_string();
    assert_eq!(r.headers[header::LOCATION], poll.as_str());
    let mut status = get(&app, &poll).await.json();
    for _ in 0..100 {
        if status["status"] != "running" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
        status = get(&app, &poll).await.json();
    }
    assert_eq!(status["status"], "done", "{status}");
    assert_eq!(status["column"], "mean of population");
    let cols = get(&app, &format!("/sessions/{id}/columns")).await.json();
    assert_eq!(cols["columns"].as_array().unwrap().len(), 2);
    assert_eq!(
        get(&app, &format!("/sessions/{id}/jobs/nope")).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn backend_failure_is_502() {
    let app = sluggish_app(Duration::ZERO, true, Duration::from_secs(10));
    let id = upload(&app, MINI_CSV).await;
    let r = post_json(&app, &format!("/sessions/{id}/joins"), mean_population()).await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(r.json()["error"], "BackendUnavailable");
    assert_eq!(r.json()["chunk"], 1);
    let cols = get(&app, &format!("/sessions/{id}/columns")).await.json();
    assert_eq!(cols["version"], 0);
    let related = get(&app, &format!("/sessions/{id}/columns/Country/related")).await;
    assert_eq!(related.status, StatusCode::BAD_GATEWAY);
}

#[tokio::test]
async fn per_session_backend_selector() {
    let app = app();
    let uri = format!(
        "/sessions?backend=local:{}",
        fixture("acled_countries.jsonl").display()
    );
    let r = send(
        &app,
        Method::POST,
        &uri,
        "text/csv",
        b"country\nIraq\n".to_vec(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let id = r.json()["session"].as_str().unwrap().to_string();
    let plan = json!({"source_column": "country", "hops": [{"property": "P47", "agg": "count"}]});
    let p = post_json(&app, &format!("/sessions/{id}/joins:preview"), plan).await;
    assert_eq!(p.json()["values"], json!([6.0]));
    let bad = send(
        &app,
        Method::POST,
        "/sessions?backend=ftp:x",
        "text/csv",
        MINI_CSV.into(),
    )
    .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn aggregation_menus() {
    let v = get(&app(), "/aggregations").await.json();
    let menus = v["menus"].as_array().unwrap();
    let find = |dt: &str, card: &str, pos: &str| {
        menus
            .iter()
            .find(|m| m["datatype"] == dt && m["cardinality"] == card && m["position"] == pos)
            .map(|m| m["ops"].clone())
    };
    assert_eq!(
        find("number", "many", "final").unwrap(),
        json!(["count", "mean", "max", "min", "sum", "variance", "sample"])
    );
    assert_eq!(
        find("entity", "many", "intermediate").unwrap(),
        json!(["through", "count", "sample"])
    );
    assert!(find("number", "one", "intermediate").is_none());
    assert_eq!(v["ops"].as_array().unwrap().len(), 9);
}
