//! HTTP API behavior: status codes, payload shapes, warm-up and CORS.

use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use dbroute::fixtures::toy_catalog;
use dbroute::graph::DEFAULT_JOIN_THRESHOLD;
use dbroute::router::{DecodeConfig, SchemaRouter, UniformScorer};
use dbroute::vocab::Vocabulary;
use dbroute::build_graph;
use serde_json::{json, Value};
use service::{app, AppState, Engine, GenerateResponse, RouteResponse, SchemaListing};
use sqlgen::llm::{ChatMessage, ChatModel, Completion, LlmError, Usage};
use tower::ServiceExt;

/// Records prompts; answers selection turns with `[2]` and others with a
/// fixed query body.
#[derive(Default)]
struct Recorder {
    prompts: Mutex<Vec<String>>,
}

impl ChatModel for Recorder {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let prompt = messages.last().map(|m| m.content.clone()).unwrap_or_default();
        let text = if prompt.contains("Question: ") { "[2]" } else { "name FROM country" };
        self.prompts.lock().unwrap().push(prompt);
        Ok(Completion {
            text: text.into(),
            usage: Usage {
                prompt_tokens: 10,
                completion_tokens: 3,
            },
        })
    }
}

fn engine(model: Option<Arc<dyn ChatModel>>) -> Engine {
    let catalog = toy_catalog();
    let graph = build_graph(&catalog, DEFAULT_JOIN_THRESHOLD);
    let config = DecodeConfig {
        beams: 4,
        groups: 2,
        ..DecodeConfig::default()
    };
    let router = SchemaRouter::new(graph, Vocabulary::from_catalog(&catalog), config).unwrap();
    Engine {
        router,
        scorer: Box::new(UniformScorer),
        catalog,
        model,
    }
}

async fn call(state: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app(state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn route_returns_candidates() {
    let state = AppState::ready(engine(None));
    let (status, body) = call(&state, Method::POST, "/route", Some(json!({"question": "names of countries", "k": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    let r: RouteResponse = serde_json::from_value(body).unwrap();
    assert!(!r.candidates.is_empty() && r.candidates.len() <= 3);
    assert!(r.latency_ms >= 0.0);
    for c in &r.candidates {
        assert!(toy_catalog().resolve_database(&c.database).is_some());
        assert!(!c.tables.is_empty());
    }
}

#[tokio::test]
async fn route_matches_library_output() {
    let reference = engine(None);
    let state = AppState::ready(engine(None));
    for q in ["names of countries", "how many singers", "car makers in asia"] {
        let lib = reference.router.route(q, 5, &UniformScorer).unwrap().candidates;
        let (_, body) = call(&state, Method::POST, "/route", Some(json!({"question": q, "k": 5}))).await;
        assert_eq!(body["candidates"], serde_json::to_value(&lib).unwrap(), "{q}");
    }
}

#[tokio::test]
async fn concurrent_routes_agree() {
    let state = AppState::ready(engine(None));
    let (_, expected) = call(&state, Method::POST, "/route", Some(json!({"question": "names of countries"}))).await;
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let state = state.clone();
            tokio::spawn(async move { call(&state, Method::POST, "/route", Some(json!({"question": "names of countries"}))).await })
        })
        .collect();
    for t in tasks {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["candidates"], expected["candidates"]);
    }
}

#[tokio::test]
async fn route_rejects_bad_input() {
    let state = AppState::ready(engine(None));
    let (status, body) = call(&state, Method::POST, "/route", Some(json!({"question": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("empty"));
    let (status, _) = call(&state, Method::POST, "/route", Some(json!({"question": "x", "k": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&state, Method::POST, "/route", Some(json!({"k": 2}))).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn warming_up_until_installed() {
    let state = AppState::pending();
    let (status, _) = call(&state, Method::POST, "/route", Some(json!({"question": "q"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&state, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    state.install(engine(None));
    let (status, _) = call(&state, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&state, Method::POST, "/route", Some(json!({"question": "q"}))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn schemata_listing() {
    let state = AppState::ready(engine(None));
    let (status, body) = call(&state, Method::GET, "/schemata/world", None).await;
    assert_eq!(status, StatusCode::OK);
    let s: SchemaListing = serde_json::from_value(body).unwrap();
    assert_eq!(s.database, "world");
    let country = s.tables.iter().find(|t| t.name.eq_ignore_ascii_case("country")).unwrap();
    assert!(country.columns.iter().any(|c| c.eq_ignore_ascii_case("name")));
    let (status, _) = call(&state, Method::GET, "/schemata/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn generate_without_model_is_failed_dependency() {
    let state = AppState::ready(engine(None));
    let (status, _) = call(&state, Method::POST, "/generate", Some(json!({"question": "q", "candidate_index": 1}))).await;
    assert_eq!(status, StatusCode::FAILED_DEPENDENCY);
}

#[tokio::test]
async fn generate_for_chosen_schema() {
    let model = Arc::new(Recorder::default());
    let state = AppState::ready(engine(Some(model.clone())));
    let req = json!({"question": "names of countries", "schema": {"database": "world", "tables": ["country"]}});
    let (status, body) = call(&state, Method::POST, "/generate", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let g: GenerateResponse = serde_json::from_value(body).unwrap();
    assert_eq!(g.sql, "SELECT name FROM country");
    assert_eq!(g.tokens, Usage { prompt_tokens: 10, completion_tokens: 3 });
    assert_eq!(g.prompts.len(), 1);
    assert!(g.prompts[0].contains("# country("));
    assert!(g.prompts[0].ends_with("SELECT"));

    let bad = json!({"question": "q", "schema": {"database": "nope", "tables": ["x"]}});
    let (status, _) = call(&state, Method::POST, "/generate", Some(bad)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn generate_by_candidate_index() {
    let model = Arc::new(Recorder::default());
    let state = AppState::ready(engine(Some(model.clone())));
    let (_, routed) = call(&state, Method::POST, "/route", Some(json!({"question": "names of countries", "k": 5}))).await;
    let routed: RouteResponse = serde_json::from_value(routed).unwrap();
    let n = routed.candidates.len();
    assert!(n >= 2, "toy catalog should yield several candidates");

    let req = json!({"question": "names of countries", "candidate_index": 2, "k": 5});
    let (status, body) = call(&state, Method::POST, "/generate", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let g: GenerateResponse = serde_json::from_value(body).unwrap();
    let second = &routed.candidates[1];
    for t in &second.tables {
        assert!(g.prompts[0].to_lowercase().contains(&format!("# {}(", t.name.to_lowercase())));
    }

    for i in [0, n + 1] {
        let req = json!({"question": "names of countries", "candidate_index": i, "k": 5});
        let (status, _) = call(&state, Method::POST, "/generate", Some(req)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "index {i}");
    }
}

#[tokio::test]
async fn generate_with_selection_turn() {
    let model = Arc::new(Recorder::default());
    let state = AppState::ready(engine(Some(model.clone())));
    let req = json!({"question": "names of countries", "strategy": "multi_schema_cot", "k": 3});
    let (status, body) = call(&state, Method::POST, "/generate", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let g: GenerateResponse = serde_json::from_value(body).unwrap();
    assert_eq!(g.prompts.len(), 2);
    assert_eq!(g.selection.unwrap().index, 2);
    assert_eq!(g.tokens.prompt_tokens, 20);

    let one = json!({"question": "q", "strategy": "multi_schema_cot", "schema": {"database": "world", "tables": ["country"]}});
    let (status, _) = call(&state, Method::POST, "/generate", Some(one)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let state = AppState::ready(engine(None));
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/route")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app(state).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
