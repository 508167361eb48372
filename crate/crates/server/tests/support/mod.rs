use axum::body::Body;
use axum::http::{Request, StatusCode};
use kgforage::kg_client::BackendConfig;
use kgforage_server::app::{router, AppConfig, AppState};
use tower::ServiceExt;

/// Export of a service session that applied `plans` to `csv`.
pub async fn service_export(
    backend: &BackendConfig,
    csv: &[u8],
    plans: &[serde_json::Value],
) -> Vec<u8> {
    let app = router(AppState::new(AppConfig::new(backend.clone())).unwrap());
    let call = |method: &str, uri: String, body: Vec<u8>| {
        let app = app.clone();
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(Body::from(body))
            .unwrap();
        async move {
            let res = app.oneshot(req).await.unwrap();
            let status = res.status();
            let bytes = axum::body::to_bytes(res.into_body(), usize::MAX)
                .await
                .unwrap();
            assert_eq!(
                status,
                StatusCode::OK,
                "{}",
                String::from_utf8_lossy(&bytes)
            );
            bytes.to_vec()
        }
    };
    let created: serde_json::Value =
        serde_json::from_slice(&call("POST", "/sessions".into(), csv.to_vec()).await).unwrap();
    let id = created["session"].as_str().unwrap().to_string();
    for plan in plans {
        let req = Request::builder()
            .method("POST")
            .uri(format!("/sessions/{id}/joins"))
            .header("content-type", "application/json")
            .body(Body::from(plan.to_string()))
            .unwrap();
        assert_eq!(
            app.clone().oneshot(req).await.unwrap().status(),
            StatusCode::OK
        );
    }
    call("GET", format!("/sessions/{id}/export"), Vec::new()).await
}
