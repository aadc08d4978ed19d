use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use poolal::annotate::{FeatureSummary, HumanQueue, QueryEntry};
use poolal::experiment::Progress;
use poolal::SampleId;
use poolal_cli::service::{router, ServiceState};
use serde_json::{json, Value};
use tower::ServiceExt;

const CLASSES: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];

fn state(secret: Option<&str>) -> ServiceState {
    ServiceState {
        queue: HumanQueue::new(4),
        progress: Arc::new(RwLock::new(Progress { budget: 12, iterations: 3, ..Progress::default() })),
        class_names: Arc::new(CLASSES.iter().map(|s| s.to_string()).collect()),
        secret: secret.map(Arc::from),
    }
}

fn stage(queue: &HumanQueue, ids: &[u64]) {
    queue.enqueue(
        ids.iter()
            .map(|&i| QueryEntry {
                sample_id: SampleId(i),
                feature_summary: FeatureSummary::of(&[i as f64, 1.0, -1.0]),
                audio_ref: Some(format!("clip-{i}.wav")),
                iteration: 1,
            })
            .collect(),
    );
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

fn post(body: Value, key: Option<&str>) -> Request<Body> {
    let mut b = Request::post("/api/labels").header("content-type", "application/json");
    if let Some(k) = key {
        b = b.header("Idempotency-Key", k);
    }
    b.body(Body::from(body.to_string())).unwrap()
}

#[tokio::test]
async fn queries_list_open_samples_with_class_names() {
    let s = state(None);
    let app = router(s.clone());
    let (status, body) = call(&app, get("/api/queries")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));

    stage(&s.queue, &[5, 2, 9]);
    let (_, body) = call(&app, get("/api/queries")).await;
    let entries = body.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    let ids: Vec<u64> = entries.iter().map(|e| e["sample_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![2, 5, 9]);
    let e = &entries[0];
    assert_eq!(e["class_names"], json!(CLASSES));
    assert_eq!(e["audio_ref"], "clip-2.wav");
    assert_eq!(e["iteration"], 1);
    assert_eq!(e["feature_summary"]["max"], 2.0);
    assert!(e.get("true_label").is_none() && e.get("label").is_none());

    // Polling changes nothing.
    let (_, again) = call(&app, get("/api/queries")).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn hard_label_is_accepted_once() {
    let s = state(None);
    let app = router(s.clone());
    stage(&s.queue, &[1, 2, 3]);

    let (status, body) = call(&app, post(json!({"sample_id": 2, "hard": 1, "annotator_id": "a1"}), Some("k-2"))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "accepted");
    let (_, open) = call(&app, get("/api/queries")).await;
    assert_eq!(open.as_array().unwrap().len(), 2);
    assert!(!s.queue.is_open(SampleId(2)));

    // Same key: acknowledged without a second commit.
    let (status, body) = call(&app, post(json!({"sample_id": 2, "hard": 3}), Some("k-2"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "replayed");
    let got = s.queue.await_labels(&[SampleId(2)], None).unwrap();
    assert_eq!(got[0].hard_class(), 1);

    // A fresh key for a labeled sample is a conflict.
    let (status, body) = call(&app, post(json!({"sample_id": 2, "hard": 0}), Some("k-other"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already labeled"));
}

#[tokio::test]
async fn key_in_body_is_honored() {
    let s = state(None);
    let app = router(s.clone());
    stage(&s.queue, &[4]);
    let body = json!({"sample_id": 4, "votes": [[0], [0, 2]], "annotator_ids": ["a", "b"], "idempotency_key": "x"});
    assert_eq!(call(&app, post(body.clone(), None)).await.1["status"], "accepted");
    assert_eq!(call(&app, post(body, None)).await.1["status"], "replayed");
    let rec = s.queue.await_labels(&[SampleId(4)], None).unwrap().remove(0);
    assert_eq!(rec.target(4), vec![2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0]);
}

#[tokio::test]
async fn invalid_submissions_are_rejected_with_a_message() {
    let s = state(None);
    let app = router(s.clone());
    stage(&s.queue, &[7]);

    let (status, body) = call(&app, post(json!({"sample_id": 7, "hard": 4}), None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("class_index 4"), "{body}");

    let (status, _) = call(&app, post(json!({"sample_id": 7, "votes": [[0, 9]]}), None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = call(&app, post(json!({"sample_id": 7, "hard": 1, "votes": [[1]]}), None)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = call(&app, post(json!({"sample_id": 8, "hard": 1}), None)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("not pending"));

    let bad = Request::post("/api/labels")
        .header("content-type", "application/json")
        .body(Body::from("{\"sample_id\": "))
        .unwrap();
    let (status, body) = call(&app, bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());

    assert!(s.queue.is_open(SampleId(7)), "rejections leave the query open");
}

#[tokio::test]
async fn progress_reports_the_shared_state() {
    let s = state(None);
    let app = router(s.clone());
    let (status, body) = call(&app, get("/api/progress")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["iteration"], 0);
    assert_eq!(body["budget"], 12);
    assert_eq!(body["class_count"], 4);
    assert_eq!(body["terminal"], false);
    assert!(body["ua"].is_null());

    {
        let mut p = s.progress.write().unwrap();
        p.iteration = 2;
        p.labeled = 9;
        p.ua = Some(0.5);
        p.terminal = true;
    }
    let (_, body) = call(&app, get("/api/progress")).await;
    assert_eq!((body["iteration"].as_u64(), body["labeled"].as_u64()), (Some(2), Some(9)));
    assert_eq!(body["ua"], 0.5);
    assert_eq!(body["terminal"], true);
}

#[tokio::test]
async fn secret_header_is_enforced_when_configured() {
    let s = state(Some("hunter2"));
    let app = router(s.clone());
    let (status, _) = call(&app, get("/api/progress")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/progress").header("X-Annotation-Secret", "wrong").body(Body::empty()).unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/progress").header("X-Annotation-Secret", "hunter2").body(Body::empty()).unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::OK);
}
