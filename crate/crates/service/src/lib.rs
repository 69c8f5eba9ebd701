//! HTTP front end for loop-closure detection.
//!
//! A session owns a pair of vocabularies and a detector. Clients stream
//! frames into it in increasing id order and read the detections back.
//!
//! | Method | Path | Body |
//! |--------|------|------|
//! | GET | `/health` | |
//! | POST | `/v1/fuse` | [`FuseRequest`] |
//! | POST | `/v1/sessions` | [`CreateSession`] |
//! | POST | `/v1/sessions/{id}/frames` | [`FrameSubmission`] |
//! | GET | `/v1/sessions/{id}/detections` | |
//! | DELETE | `/v1/sessions/{id}` | |
//! | POST | `/v1/eval/precision-recall` | [`PrecisionRecallRequest`] |
//! | POST | `/v1/eval/ate` | [`AteRequest`] |
//!
//! Errors come back as [`ErrorBody`] with a 4xx/5xx status. Submitting a
//! frame id that is not larger than the previous one answers 409.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::{Mutex, RwLock};
use uuid::Uuid;

use hgi_core::api::{
    AteRequest, AteResponse, CreateSession, DetectionsResponse, ErrorBody, FrameSubmission, FuseRequest,
    FuseResponse, Health, PrecisionRecallRequest, PrecisionRecallResponse, SessionInfo,
};
use hgi_core::config::RunConfig;
use hgi_core::eval::{ate_rmse, EvalReport, Trajectory};
use hgi_core::loopdet::{fuse, FrameOutcome, LoopDetector, LoopError};
use hgi_core::pipeline::quantize_pair;
use hgi_core::vocab::Vocabulary;
use hgi_core::{Family, FrameFeatures};

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

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message.to_string())
    }

    fn unprocessable(message: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Session {
    vocab_s: Arc<Vocabulary>,
    vocab_g: Arc<Vocabulary>,
    detector: Mutex<LoopDetector>,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Arc<Session>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    async fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"));
        let id = Uuid::parse_str(id).map_err(|_| not_found())?;
        self.sessions.read().await.get(&id).cloned().ok_or_else(not_found)
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn fuse_scores(body: Result<Json<FuseRequest>, JsonRejection>) -> ApiResult<FuseResponse> {
    let Json(req) = body?;
    if !(req.d_s >= 0.0 && req.d_g >= 0.0) {
        return Err(ApiError::unprocessable("distances must be non-negative"));
    }
    Ok(Json(FuseResponse {
        s: fuse(req.d_s, req.d_g, &req.fusion),
    }))
}

async fn load_vocab(path: std::path::PathBuf, family: Family) -> Result<Vocabulary, ApiError> {
    let shown = path.display().to_string();
    let v = tokio::task::spawn_blocking(move || Vocabulary::load(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::unprocessable(format!("{shown}: {e}")))?;
    if v.family() != family {
        return Err(ApiError::unprocessable(format!("{shown} is a {} vocabulary, expected {family}", v.family())));
    }
    Ok(v)
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let Json(req) = body?;
    validate(&req.config)?;
    let vocab_s = load_vocab(req.vocab_s, Family::Salient).await?;
    let vocab_g = load_vocab(req.vocab_g, Family::Geometric).await?;
    let info = SessionInfo {
        session_id: String::new(),
        salient_words: vocab_s.word_count(),
        geometric_words: vocab_g.word_count(),
    };
    let id = Uuid::new_v4();
    let session = Session {
        vocab_s: Arc::new(vocab_s),
        vocab_g: Arc::new(vocab_g),
        detector: Mutex::new(LoopDetector::new(req.config.fusion)),
    };
    state.sessions.write().await.insert(id, Arc::new(session));
    log::info!("session {id} opened");
    Ok((
        StatusCode::CREATED,
        Json(SessionInfo {
            session_id: id.to_string(),
            ..info
        }),
    ))
}

fn validate(cfg: &RunConfig) -> Result<(), ApiError> {
    cfg.validate().map_err(ApiError::unprocessable)
}

async fn submit_frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FrameSubmission>, JsonRejection>,
) -> ApiResult<FrameOutcome> {
    let Json(req) = body?;
    let session = state.session(&id).await?;
    let sal = FrameFeatures::try_from(req.salient).map_err(ApiError::unprocessable)?;
    let geo = FrameFeatures::try_from(req.geometric).map_err(ApiError::unprocessable)?;
    if (sal.family(), geo.family()) != (Family::Salient, Family::Geometric) {
        return Err(ApiError::unprocessable("expected one salient and one geometric feature set"));
    }
    if sal.frame_id() != geo.frame_id() {
        return Err(ApiError::unprocessable(format!(
            "salient frame {} does not match geometric frame {}",
            sal.frame_id(),
            geo.frame_id()
        )));
    }
    let frame_id = sal.frame_id();
    let (vs, vg) = (session.vocab_s.clone(), session.vocab_g.clone());
    let (bow_s, bow_g) = tokio::task::spawn_blocking(move || quantize_pair(&vs, &vg, &sal, &geo))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::unprocessable)?;
    let mut det = session.detector.lock().await;
    match det.process(frame_id, &bow_s, &bow_g) {
        Ok(outcome) => Ok(Json(outcome)),
        Err(e @ LoopError::OutOfOrder(_)) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(ApiError::unprocessable(e)),
    }
}

async fn detections(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<DetectionsResponse> {
    let session = state.session(&id).await?;
    let det = session.detector.lock().await;
    Ok(Json(DetectionsResponse {
        frames: det.store().decisions().len() as u64,
        stored: det.store().len(),
        last_frame: det.last_frame(),
        detections: det.detections().to_vec(),
    }))
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let key = state.session(&id).await.map(|_| Uuid::parse_str(&id).expect("checked"))?;
    state.sessions.write().await.remove(&key);
    log::info!("session {id} closed");
    Ok(StatusCode::NO_CONTENT)
}

async fn precision_recall(body: Result<Json<PrecisionRecallRequest>, JsonRejection>) -> ApiResult<PrecisionRecallResponse> {
    let Json(req) = body?;
    Ok(Json(EvalReport::new(&req.detections, &req.labels, req.tol)))
}

async fn ate(body: Result<Json<AteRequest>, JsonRejection>) -> ApiResult<AteResponse> {
    let Json(req) = body?;
    let pred = Trajectory::new(req.pred).map_err(ApiError::bad_request)?;
    let gt = Trajectory::new(req.gt).map_err(ApiError::bad_request)?;
    let rmse = ate_rmse(&pred, &gt, req.align).map_err(ApiError::unprocessable)?;
    Ok(Json(AteResponse {
        ate_rmse: rmse,
        align: req.align,
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/fuse", post(fuse_scores))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", axum::routing::delete(close_session))
        .route("/v1/sessions/{id}/frames", post(submit_frame))
        .route("/v1/sessions/{id}/detections", get(detections))
        .route("/v1/eval/precision-recall", post(precision_recall))
        .route("/v1/eval/ate", post(ate))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new())).await
}

/// Serves on an ephemeral local port in the background and returns its
/// base URL.
pub async fn spawn_local() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let url = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move {
        if let Err(e) = serve(listener).await {
            log::error!("service stopped: {e}");
        }
    });
    Ok(url)
}
