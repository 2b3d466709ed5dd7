//! Read-only HTTP JSON API over a loaded predictor.
//!
//! | method | path          | body                         |
//! |--------|---------------|------------------------------|
//! | POST   | `/v1/predict` | `{"subject_line": "..."}`    |
//! | GET    | `/v1/health`  |                              |
//! | GET    | `/v1/model`   |                              |
//!
//! Artifacts are installed once, before serving; requests never mutate them.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{EntryCounts, LoadedArtifacts};
use crate::lstm::LstmHyperparams;
use crate::predictor::{ComponentRate, PredictError, Prediction, PredictorHandle, RateSource, TrigramScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub subject_line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentView {
    pub text: String,
    pub token_span: [usize; 2],
    pub rate: f64,
    pub source: RateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentsView {
    pub trigram: ComponentView,
    pub bigrams: Vec<ComponentView>,
    pub unigrams: Vec<ComponentView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseView {
    pub text: String,
    pub token_span: [usize; 2],
    pub rate: f64,
    pub components: ComponentsView,
}

/// Wire form of a [`Prediction`]; also what `nlorp predict --json` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub open_rate: f64,
    pub tokens: Vec<String>,
    pub phrases: Vec<PhraseView>,
}

impl From<&ComponentRate> for ComponentView {
    fn from(c: &ComponentRate) -> Self {
        Self {
            text: c.phrase.text(),
            token_span: [c.phrase.span.start, c.phrase.span.end],
            rate: c.rate,
            source: c.source,
        }
    }
}

impl From<&TrigramScore> for PhraseView {
    fn from(s: &TrigramScore) -> Self {
        Self {
            text: s.trigram.text(),
            token_span: [s.trigram.span.start, s.trigram.span.end],
            rate: s.rate,
            components: ComponentsView {
                trigram: (&s.trigram_component).into(),
                bigrams: s.bigram_components.iter().map(Into::into).collect(),
                unigrams: s.unigram_components.iter().map(Into::into).collect(),
            },
        }
    }
}

impl From<&Prediction> for PredictResponse {
    fn from(p: &Prediction) -> Self {
        Self {
            open_rate: p.open_rate,
            tokens: p.tokens.clone(),
            phrases: p.selected.iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub build_id: String,
    pub mapping_entry_counts: EntryCounts,
    pub lstm_hyperparams: LstmHyperparams,
    pub stopword_count: usize,
    pub top_k: usize,
    /// From the training metadata, when it was available.
    pub corpus_mean_open_rate: Option<f64>,
}

impl ModelInfo {
    pub fn of(handle: &PredictorHandle, corpus_mean_open_rate: Option<f64>) -> Self {
        Self {
            build_id: handle.build_id().to_owned(),
            mapping_entry_counts: EntryCounts::of(handle.mapping()),
            lstm_hyperparams: handle.model().hyperparams.clone(),
            stopword_count: handle.mapping().stopwords().len(),
            top_k: handle.top_k(),
            corpus_mean_open_rate,
        }
    }
}

struct Loaded {
    handle: PredictorHandle,
    info: ModelInfo,
}

#[derive(Clone, Default)]
pub struct ServiceState {
    loaded: Arc<OnceLock<Loaded>>,
}

impl ServiceState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs the artifacts. Only the first call has an effect; returns
    /// whether this call installed them.
    pub fn install(&self, artifacts: LoadedArtifacts) -> bool {
        let mean = artifacts.meta.as_ref().map(|m| m.corpus_mean_open_rate);
        let info = ModelInfo::of(&artifacts.handle, mean);
        self.loaded
            .set(Loaded {
                handle: artifacts.handle,
                info,
            })
            .is_ok()
    }

    pub fn is_loaded(&self) -> bool {
        self.loaded.get().is_some()
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_loaded() -> Response {
    error_response(StatusCode::SERVICE_UNAVAILABLE, "model artifacts are not loaded")
}

async fn predict(State(state): State<ServiceState>, body: Bytes) -> Response {
    let Some(loaded) = state.loaded.get() else {
        return not_loaded();
    };
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match loaded.handle.predict(&request.subject_line) {
        Ok(p) => Json(PredictResponse::from(&p)).into_response(),
        Err(e @ PredictError::EmptySubjectLine) => error_response(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(state): State<ServiceState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model_loaded: state.is_loaded(),
    })
}

async fn model(State(state): State<ServiceState>) -> Response {
    match state.loaded.get() {
        Some(loaded) => Json(loaded.info.clone()).into_response(),
        None => not_loaded(),
    }
}

async fn cors(request: Request, next: Next) -> Response {
    let mut response = if request.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(request).await
    };
    let headers = response.headers_mut();
    headers.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    headers.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, OPTIONS"),
    );
    headers.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("content-type"),
    );
    response
}

pub fn router(state: ServiceState, allow_cors: bool) -> Router {
    let router = Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/health", get(health))
        .route("/v1/model", get(model))
        .with_state(state);
    if allow_cors {
        router.layer(middleware::from_fn(cors))
    } else {
        router
    }
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: ServiceState, allow_cors: bool) -> std::io::Result<()> {
    axum::serve(listener, router(state, allow_cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(port: u16) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await
}
