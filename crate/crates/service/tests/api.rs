use std::sync::OnceLock;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use lxl_core::dataset::{generate_synthetic, Dataset};
use lxl_core::explain::{explain, instance_seed, ExplainParams, GeneticParams};
use lxl_core::models::{train_classifier, train_pgaae, Aae, AaeConfig, BlackBox, ClassifierConfig, GrowthSchedule};
use lxl_service::{router, schemas, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

struct Fixture {
    data: Dataset,
    blackbox: BlackBox,
    aae: Aae,
    /// An instance the library explains with a full set of exemplars, and its serialized explanation.
    feasible: (String, String),
    /// An instance whose explanation fails, if the fixture has one.
    infeasible: Option<String>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = generate_synthetic(10, 28, 3).unwrap();
        let cc = ClassifierConfig {
            epochs: 20,
            batch_size: 8,
            augment: false,
            width: 8,
            ..ClassifierConfig::default()
        };
        let (blackbox, _) = train_classifier(&data, None, &cc, 1).unwrap();
        let ac = AaeConfig {
            latent_dim: 8,
            channels: vec![16, 8, 8],
            calibration_epochs: 0,
            ..AaeConfig::default()
        };
        let (aae, _) = train_pgaae(&data, None, &GrowthSchedule::desk([3, 3, 6]), &ac, 2).unwrap();
        let params = service_params().explain;
        let (mut feasible, mut infeasible) = (None, None);
        for it in data.items() {
            match explain(&it.image, &blackbox, &aae, &params, instance_seed(&it.id)) {
                Ok(e) if feasible.is_none() && e.exemplars.len() == 4 => feasible = Some((it.id.clone(), e.to_json().unwrap())),
                Err(_) if infeasible.is_none() => infeasible = Some(it.id.clone()),
                _ => {}
            }
            if feasible.is_some() && infeasible.is_some() {
                break;
            }
        }
        let feasible = feasible.expect("fixture explains at least one instance");
        Fixture {
            data,
            blackbox,
            aae,
            feasible,
            infeasible,
        }
    })
}

fn service_params() -> ServiceConfig {
    let mut explain = ExplainParams {
        genetic: GeneticParams {
            population: 30,
            generations: 4,
            max_generations: 12,
            init_std: 3.0,
            mutation_std: 1.0,
            tau: 0.0,
            ..GeneticParams::default()
        },
        ..ExplainParams::default()
    };
    explain.exemplars.tau = 0.0;
    ServiceConfig {
        explain,
        ..ServiceConfig::default()
    }
}

fn app_with(data: Dataset, loaded: bool) -> (Router, tempfile::TempDir) {
    let f = fixture();
    let cache = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        cache: cache.path().to_path_buf(),
        ..service_params()
    };
    let models = loaded.then(|| (f.blackbox.clone(), f.aae.clone()));
    (router(AppState::from_parts(models, data, config)), cache)
}

fn app() -> (Router, tempfile::TempDir) {
    app_with(fixture().data.clone(), true)
}

async fn call(app: &Router, method: &str, uri: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

fn assert_schema(schema: &str, body: &[u8]) -> Value {
    let value: Value = serde_json::from_slice(body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(body)));
    let compiled = jsonschema::JSONSchema::compile(&serde_json::from_str(schema).unwrap()).unwrap();
    if let Err(errors) = compiled.validate(&value) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("schema violations: {msgs:?}");
    }
    value
}

#[test]
fn schemas_compile() {
    for (name, s) in schemas::ALL {
        let v: Value = serde_json::from_str(s).unwrap_or_else(|e| panic!("{name}: {e}"));
        jsonschema::JSONSchema::compile(&v).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[tokio::test]
async fn instances_are_listed_in_id_order() {
    let (app, _c) = app();
    let (status, body) = call(&app, "GET", "/api/instances").await;
    assert_eq!(status, StatusCode::OK);
    let v = assert_schema(schemas::INSTANCES, &body);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 80);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[tokio::test]
async fn empty_dataset_lists_nothing() {
    let (app, _c) = app_with(Dataset::new(Vec::new()).unwrap(), true);
    let (status, body) = call(&app, "GET", "/api/instances").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(assert_schema(schemas::INSTANCES, &body), Value::Array(vec![]));
}

#[tokio::test]
async fn missing_models_answer_503() {
    let (app, _c) = app_with(fixture().data.clone(), false);
    let id = &fixture().data.items()[0].id;
    for (m, uri) in [
        ("GET", "/api/instances".to_string()),
        ("GET", format!("/api/instances/{id}/classification")),
        ("POST", format!("/api/instances/{id}/explanation")),
        ("GET", "/api/atlas".to_string()),
    ] {
        let (status, body) = call(&app, m, &uri).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{m} {uri}");
        assert_schema(schemas::ERROR, &body);
    }
}

#[tokio::test]
async fn classification_matches_library() {
    let (app, _c) = app();
    let item = &fixture().data.items()[5];
    let (status, body) = call(&app, "GET", &format!("/api/instances/{}/classification", item.id)).await;
    assert_eq!(status, StatusCode::OK);
    let v = assert_schema(schemas::CLASSIFICATION, &body);
    let direct = fixture().blackbox.classify(&item.image).unwrap();
    let served: Vec<f32> = v["scores"].as_array().unwrap().iter().map(|s| s.as_f64().unwrap() as f32).collect();
    assert_eq!(served.len(), 8);
    assert!(served.iter().zip(&direct).all(|(a, b)| a.to_bits() == b.to_bits()));

    let (status, body) = call(&app, "GET", "/api/instances/nope/classification").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_schema(schemas::ERROR, &body);
}

async fn wait_for(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (status, body) = call(app, "GET", &format!("/api/jobs/{job}")).await;
        assert_eq!(status, StatusCode::OK);
        let v = assert_schema(schemas::JOB, &body);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("job {job} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn explanation_job_lifecycle() {
    let (app, _c) = app();
    let (id, direct) = &fixture().feasible;
    let uri = format!("/api/instances/{id}/explanation");

    let (status, _) = call(&app, "GET", &uri).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(&app, "POST", &uri).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = assert_schema(schemas::JOB, &body)["job"].as_str().unwrap().to_string();

    let (status, body) = call(&app, "POST", &uri).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_schema(schemas::ERROR, &body);

    let done = wait_for(&app, &job).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);

    let (status, first) = call(&app, "GET", &uri).await;
    assert_eq!(status, StatusCode::OK);
    let v = assert_schema(schemas::EXPLANATION, &first);
    assert_eq!(v["exemplars"].as_array().unwrap().len(), 4);

    let (_, second) = call(&app, "GET", &uri).await;
    assert_eq!(first, second);

    assert_eq!(first, direct.as_bytes());

    // A new request for a cached instance completes immediately.
    let (status, body) = call(&app, "POST", &uri).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(assert_schema(schemas::JOB, &body)["state"], "done");

    let (_, body) = call(&app, "GET", "/api/instances").await;
    let listed = serde_json::from_slice::<Value>(&body).unwrap();
    let rec = listed.as_array().unwrap().iter().find(|r| r["id"] == id.as_str()).unwrap().clone();
    assert_eq!(rec["explanation"], uri.as_str());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn infeasible_explanation_fails_with_stage() {
    let Some(id) = &fixture().infeasible else {
        return;
    };
    let (app, _c) = app();
    let uri = format!("/api/instances/{id}/explanation");
    let (status, body) = call(&app, "POST", &uri).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = assert_schema(schemas::JOB, &body)["job"].as_str().unwrap().to_string();
    let done = wait_for(&app, &job).await;
    assert_eq!(done["state"], "failed");
    assert!(done["stage"].is_string());
    let (status, _) = call(&app, "GET", &uri).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_instance_and_job_are_404() {
    let (app, _c) = app();
    for (m, uri) in [
        ("POST", "/api/instances/nope/explanation"),
        ("GET", "/api/instances/nope/explanation"),
        ("GET", "/api/jobs/job-999"),
    ] {
        let (status, body) = call(&app, m, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{m} {uri}");
        assert_schema(schemas::ERROR, &body);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn atlas_endpoint() {
    let (app, _c) = app();
    let (status, body) = call(&app, "GET", "/api/atlas").await;
    assert_eq!(status, StatusCode::OK);
    let v = assert_schema(schemas::ATLAS, &body);
    assert_eq!(v["atlas"]["coords"].as_array().unwrap().len(), 80);
    assert!(v.get("separation").is_none());

    let (status, body) = call(&app, "GET", "/api/atlas?classA=MEL&classB=BKL").await;
    assert_eq!(status, StatusCode::OK);
    let v = assert_schema(schemas::ATLAS, &body);
    assert_eq!(v["separation"]["paper_reference"], 0.856);
    let acc = v["separation"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    for q in ["classA=MEL&classB=XYZ", "classA=MEL"] {
        let (status, body) = call(&app, "GET", &format!("/api/atlas?{q}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{q}");
        assert_schema(schemas::ERROR, &body);
    }
}

#[tokio::test]
async fn thumbnails_are_png() {
    let (app, _c) = app();
    let id = &fixture().data.items()[0].id;
    let (status, body) = call(&app, "GET", &format!("/api/instances/{id}/image")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[..4], b"\x89PNG");
}
