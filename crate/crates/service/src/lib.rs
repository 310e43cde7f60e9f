//! HTTP API for interactive schema selection: routing, SQL generation for
//! a chosen candidate, and schema listings.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dbroute::router::{RoutingCandidate, Scorer, SchemaRouter};
use dbroute::SchemaCatalog;
use serde::{Deserialize, Serialize};
use sqlgen::ex::{generate, GenerateError};
use sqlgen::llm::{ChatModel, LlmError, Usage};
use sqlgen::prompt::{candidate, PromptError, PromptStrategy, Selection, StrategyKind};
use tower_http::cors::CorsLayer;
use tracing::info;

pub const DEFAULT_K: usize = 5;

/// Everything the handlers need, loaded once.
pub struct Engine {
    pub router: SchemaRouter,
    pub scorer: Box<dyn Scorer>,
    pub catalog: SchemaCatalog,
    /// `None` when no chat endpoint is configured.
    pub model: Option<Arc<dyn ChatModel>>,
}

/// Shared handle; empty until the engine is installed.
#[derive(Clone, Default)]
pub struct AppState {
    engine: Arc<OnceLock<Arc<Engine>>>,
}

impl AppState {
    pub fn pending() -> Self {
        Self::default()
    }

    pub fn ready(engine: Engine) -> Self {
        let s = Self::default();
        s.install(engine);
        s
    }

    /// Makes the engine visible to handlers; later calls are ignored.
    pub fn install(&self, engine: Engine) {
        let _ = self.engine.set(Arc::new(engine));
    }

    fn engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine
            .get()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "router is still loading"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResponse {
    pub candidates: Vec<RoutingCandidate>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitSchema {
    pub database: String,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub question: String,
    /// 1-based index into the routing candidates for the question.
    #[serde(default)]
    pub candidate_index: Option<usize>,
    #[serde(default)]
    pub schema: Option<ExplicitSchema>,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    /// Candidates routed for the multi strategies.
    #[serde(default)]
    pub k: Option<usize>,
}

fn default_strategy() -> StrategyKind {
    StrategyKind::BestSchema
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub sql: String,
    pub tokens: Usage,
    pub prompts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableListing {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaListing {
    pub database: String,
    pub tables: Vec<TableListing>,
}

/// Listing of one database as stored in the catalog.
pub fn schema_listing(catalog: &SchemaCatalog, database: &str) -> Option<SchemaListing> {
    let db = catalog.resolve_database(database)?;
    Some(SchemaListing {
        database: db.id.clone(),
        tables: db
            .tables
            .iter()
            .map(|t| TableListing {
                name: t.name.clone(),
                columns: t.columns.iter().map(|c| c.name.clone()).collect(),
            })
            .collect(),
    })
}

fn check_question(q: &str) -> Result<(), ApiError> {
    if q.trim().is_empty() {
        Err(ApiError::bad_request("question must not be empty"))
    } else {
        Ok(())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn route_candidates(engine: &Engine, question: &str, k: usize) -> Result<dbroute::router::Routing, ApiError> {
    engine
        .router
        .route(question, k, engine.scorer.as_ref())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

async fn route_handler(
    State(state): State<AppState>,
    req: Result<Json<RouteRequest>, JsonRejection>,
) -> Result<Json<RouteResponse>, ApiError> {
    let engine = state.engine()?;
    let Json(req) = req?;
    check_question(&req.question)?;
    let k = req.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let routing = blocking(move || route_candidates(&engine, &req.question, k)).await?;
    Ok(Json(RouteResponse {
        candidates: routing.candidates,
        latency_ms: routing.latency.as_secs_f64() * 1000.0,
    }))
}

fn prompt_status(e: &PromptError) -> StatusCode {
    match e {
        PromptError::UnknownDatabase(_) | PromptError::UnknownTable { .. } => StatusCode::NOT_FOUND,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn generate_blocking(engine: &Engine, req: GenerateRequest) -> Result<GenerateResponse, ApiError> {
    let model = engine
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::FAILED_DEPENDENCY, "no chat endpoint configured"))?;
    let k = req.k.unwrap_or(DEFAULT_K).max(1);
    let candidates: Vec<RoutingCandidate> = match (&req.schema, req.candidate_index) {
        (Some(s), _) => {
            let tables: Vec<&str> = s.tables.iter().map(String::as_str).collect();
            vec![candidate(&s.database, &tables)]
        }
        (None, Some(i)) => {
            let routed = route_candidates(engine, &req.question, k.max(i))?.candidates;
            if i == 0 || i > routed.len() {
                return Err(ApiError::bad_request(format!(
                    "candidate_index {i} out of range 1..={}",
                    routed.len()
                )));
            }
            match req.strategy {
                StrategyKind::BestSchema => vec![routed[i - 1].clone()],
                _ => routed,
            }
        }
        (None, None) => route_candidates(engine, &req.question, k)?.candidates,
    };
    let count = match req.strategy {
        StrategyKind::BestSchema => 1,
        _ => candidates.len().min(k),
    };
    let strategy = PromptStrategy::new(req.strategy, count).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let g = generate(&req.question, &candidates, strategy, model.as_ref(), &engine.catalog).map_err(|e| match e {
        GenerateError::Prompt(p) => ApiError::new(prompt_status(&p), p.to_string()),
        GenerateError::Llm(LlmError::Unconfigured) => ApiError::new(StatusCode::FAILED_DEPENDENCY, "no chat endpoint configured"),
        GenerateError::Llm(l) => ApiError::new(StatusCode::BAD_GATEWAY, l.to_string()),
    })?;
    Ok(GenerateResponse {
        sql: g.sql,
        tokens: g.usage,
        prompts: g.prompts,
        selection: g.selection,
    })
}

async fn generate_handler(
    State(state): State<AppState>,
    req: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let engine = state.engine()?;
    let Json(req) = req?;
    check_question(&req.question)?;
    blocking(move || generate_blocking(&engine, req)).await.map(Json)
}

async fn schemata_handler(State(state): State<AppState>, Path(database): Path<String>) -> Result<Json<SchemaListing>, ApiError> {
    let engine = state.engine()?;
    schema_listing(&engine.catalog, &database)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown database `{database}`")))
}

async fn health_handler(State(state): State<AppState>) -> StatusCode {
    if state.engine.get().is_some() {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/route", post(route_handler))
        .route("/generate", post(generate_handler))
        .route("/schemata/{database}", get(schemata_handler))
        .route("/health", get(health_handler))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped. The listener is bound before the
/// engine is ready so early requests get 503.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app(state)).await
}
