use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use pnl_core::data::{generate_synthetic_case, CaseRecord, SyntheticSpec};
use pnl_core::geometry::{classify_positioning, LandmarkSet, Laterality, Point2, QualityLabel};
use pnl_nnet::{init_params, save_params, ModelConfig, Variant};
use pnl_service::{router, AnnotationStore, AppState, LoadedModel};
use pnl_train::NetPredictor;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    state: AppState,
    records: Vec<CaseRecord>,
    data: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = SyntheticSpec { seed: 3, ..Default::default() };
    let records = pnl_core::data::write_synthetic_dataset(&spec, 4, &data).unwrap();
    let store = AnnotationStore::open(dir.path().join("store")).unwrap();
    store.seed(&records).unwrap();
    let state = AppState::new(store, Some(data.clone()));
    Fixture { _dir: dir, state, records, data }
}

fn toy_model(dir: &std::path::Path) -> LoadedModel {
    let cfg = ModelConfig::toy(Variant::CoordAttUNet);
    let path = dir.join("toy.pnlw");
    save_params(&cfg, &init_params(&cfg, 9).unwrap(), &path).unwrap();
    LoadedModel { id: "toy".into(), predictor: NetPredictor::load(&path).unwrap() }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let ctype = res.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec(), ctype)
}

fn json_req(method: &str, uri: &str, body: &Value) -> Request<Body> {
    Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).body(Body::empty()).unwrap()
}

fn multipart(fields: &[(&str, &[u8])]) -> Request<Body> {
    let boundary = "XBOUNDARYX";
    let mut body = Vec::new();
    for (name, value) in fields {
        body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes());
        if *name == "image" {
            body.extend_from_slice(b"; filename=\"x\"\r\nContent-Type: application/octet-stream");
        }
        body.extend_from_slice(b"\r\n\r\n");
        body.extend_from_slice(value);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::builder()
        .method("POST")
        .uri("/api/predict")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

fn verdict_body(lm: &LandmarkSet, w: usize, h: usize, side: &str) -> Value {
    json!({ "landmarks": lm, "shape": { "width": w, "height": h }, "laterality": side })
}

#[tokio::test]
async fn verdict_examples_and_errors() {
    let app = router(fixture().state, None);
    let lm = LandmarkSet { nipple: Point2::new(300.0, 256.0), pec1: Point2::new(100.0, 0.0), pec2: Point2::new(100.0, 511.0) };
    let req = || json_req("POST", "/api/verdict", &verdict_body(&lm, 512, 512, "L"));
    let (status, first, _) = call(&app, req()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["label"], "good");
    assert_eq!(v["foot"], json!({ "x": 100.0, "y": 256.0 }));
    assert_eq!(v["pnl"][1], v["foot"]);
    let (_, second, _) = call(&app, req()).await;
    assert_eq!(first, second);

    let degenerate = LandmarkSet { pec2: lm.pec1, ..lm };
    let (status, _, _) = call(&app, json_req("POST", "/api/verdict", &verdict_body(&degenerate, 512, 512, "L"))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, _) = call(&app, json_req("POST", "/api/verdict", &json!({ "shape": 3 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn verdict_matches_geometry_on_synthetic_cases() {
    let app = router(fixture().state, None);
    let spec = SyntheticSpec { seed: 11, ..Default::default() };
    let shape = spec.shape();
    for i in 0..40 {
        let (_, rec) = generate_synthetic_case(&spec, i).unwrap();
        let lm = pnl_core::imaging::native_landmarks(&rec, shape, pnl_core::data::PECTORAL_MARGIN).unwrap();
        let side = if rec.laterality == Laterality::Left { "L" } else { "R" };
        let want = classify_positioning(&lm, shape, rec.laterality).unwrap();
        let (status, body, _) = call(&app, json_req("POST", "/api/verdict", &verdict_body(&lm, shape.width, shape.height, side))).await;
        assert_eq!(status, StatusCode::OK);
        let got: pnl_core::geometry::QualityVerdict = serde_json::from_slice(&body).unwrap();
        assert_eq!(got, want);
        assert_eq!(Some(got.label), rec.derived_label);
    }
}

#[tokio::test]
async fn annotation_round_trip_and_revisions() {
    let fx = fixture();
    let app = router(fx.state.clone(), None);
    let (status, _, _) = call(&app, get("/api/annotations/nope")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let mut rec = serde_json::to_value(&fx.records[0]).unwrap();
    let id = fx.records[0].case_id.clone();
    rec["nipple_bbox"] = json!([101.123456789012345, 97.0000000001, 109.98765432101234, 104.5]);
    rec["pectoral_line"] = json!([[40.333333333333336, 0.1], [0.7071067811865476, 150.25]]);
    let uri = format!("/api/annotations/{id}");

    let (status, _, _) = call(&app, json_req("PUT", &uri, &json!({ "record": rec, "revision": 0 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body, _) = call(&app, json_req("PUT", &uri, &json!({ "record": rec, "revision": 1 }))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let saved: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(saved["revision"], 2);

    let (_, body, _) = call(&app, get(&uri)).await;
    let back: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(back["record"]["nipple_bbox"], rec["nipple_bbox"]);
    assert_eq!(back["record"]["pectoral_line"], rec["pectoral_line"]);
    assert!(back["record"]["derived_label"].is_string());

    let (status, body, _) = call(&app, json_req("PUT", &uri, &json!({ "record": rec, "revision": 1 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["current_revision"], 2);

    let other = format!("/api/annotations/{}", fx.records[1].case_id);
    let (status, _, _) = call(&app, json_req("PUT", &other, &json!({ "record": rec, "revision": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut broken = rec.clone();
    broken.as_object_mut().unwrap().remove("pixel_spacing");
    let (status, body, _) = call(&app, json_req("PUT", &uri, &json!({ "record": broken, "revision": 2 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("pixel_spacing"));

    // a fresh store on the same directory sees the write
    let reopened = AnnotationStore::open(fx._dir.path().join("store")).unwrap();
    assert_eq!(reopened.get(&id).unwrap().revision, 2);
}

#[tokio::test]
async fn cases_and_images() {
    let fx = fixture();
    let app = router(fx.state.clone(), None);
    let (status, body, _) = call(&app, get("/api/cases")).await;
    assert_eq!(status, StatusCode::OK);
    let cases: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(cases.len(), fx.records.len());
    assert!(cases.iter().all(|c| c["revision"] == 1));

    let (status, png, ctype) = call(&app, get(&format!("/api/images/{}", fx.records[2].case_id))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let img = pnl_core::imaging::ImageGrid::decode(&png).unwrap();
    assert_eq!((img.width(), img.height()), (fx.records[2].image_shape.unwrap().width, fx.records[2].image_shape.unwrap().height));
    let (status, _, _) = call(&app, get("/api/images/missing")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn predict_needs_model_and_image() {
    let fx = fixture();
    let app = router(fx.state.clone(), None);
    let pgm = std::fs::read(fx.data.join(&fx.records[0].image)).unwrap();
    let (status, _, _) = call(&app, multipart(&[("image", &pgm)])).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    fx.state.set_model(toy_model(fx._dir.path()));
    let (status, _, _) = call(&app, multipart(&[("image", b"definitely not an image")])).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _, _) = call(&app, multipart(&[("image", &pgm), ("model", b"other")])).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body, _) = call(&app, multipart(&[("image", &pgm), ("laterality", b"R")])).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["model"], "toy");
    let lm: LandmarkSet = serde_json::from_value(v["landmarks"].clone()).unwrap();
    let shape = fx.records[0].image_shape.unwrap();
    let want = classify_positioning(&lm, shape, Laterality::Right).unwrap();
    assert_eq!(serde_json::from_value::<pnl_core::geometry::QualityVerdict>(v["verdict"].clone()).unwrap(), want);
    assert!(v.get("errors").is_none());

    let id = fx.records[0].case_id.as_bytes();
    let (status, body, _) = call(&app, multipart(&[("image", &pgm), ("case_id", id)])).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert!(v["errors"]["nipple"].as_f64().unwrap() >= 0.0);
    assert!(matches!(want.label, QualityLabel::Good | QualityLabel::Poor));
}

#[tokio::test]
async fn static_bundle_is_served() {
    let fx = fixture();
    let ui = fx._dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let app = router(fx.state.clone(), Some(ui));
    let (status, body, _) = call(&app, get("/index.html")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    let (status, _, _) = call(&app, get("/api/cases")).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn concurrent_writes_to_different_cases() {
    let fx = fixture();
    let store = fx.state.store();
    std::thread::scope(|s| {
        for rec in &fx.records {
            s.spawn(move || {
                for rev in 1..=20 {
                    store.put(rec.clone(), rev).unwrap();
                }
            });
        }
    });
    for rec in &fx.records {
        assert_eq!(store.get(&rec.case_id).unwrap().revision, 21);
        assert_eq!(store.get(&rec.case_id).unwrap().record, *rec);
    }
}
