//! HTTP facade over the copilot services. Handlers run on the blocking
//! pool and pass through the engine's admission gate.

mod error;
pub mod wire;

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use copilot_core::clock::Clock;
use copilot_core::corpus::TimeRange;
use copilot_core::services::{Copilot, ProfileOrigin, ProfileOutcome, ServiceError};
use serde::Serialize;

pub use error::{classify, ApiError, ErrorBody};
use wire::*;

/// Set on cacheable responses: `hit` or `miss`. Kept out of the body so
/// repeated requests return identical bodies.
pub const CACHE_HEADER: &str = "x-cache";

#[derive(Clone)]
pub struct AppState {
    pub copilot: Arc<Copilot>,
    pub clock: Arc<dyn Clock>,
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs `f` on the blocking pool under a service permit.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Copilot) -> Result<T, ServiceError> + Send + 'static,
{
    let copilot = Arc::clone(&state.copilot);
    tokio::task::spawn_blocking(move || {
        let engine = Arc::clone(copilot.engine());
        engine.serve(|_| f(&copilot))?.map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::internal(format!("handler panicked: {e}")))?
}

fn with_cache_header<T: Serialize>(body: T, hit: bool) -> Response {
    let mut resp = Json(body).into_response();
    resp.headers_mut().insert(
        HeaderName::from_static(CACHE_HEADER),
        HeaderValue::from_static(if hit { "hit" } else { "miss" }),
    );
    resp
}

async fn set_profile(State(s): State<AppState>, body: Result<Json<ProfileRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let served = blocking(&s, move |c| c.generate_profile(&req.name)).await?;
    let body = match served.value {
        ProfileOutcome::Profile(p) => ProfileResponse {
            profile: p.text,
            origin: p.origin,
            code: None,
        },
        ProfileOutcome::NoPublications { .. } => ProfileResponse {
            profile: String::new(),
            origin: ProfileOrigin::Edited,
            code: Some(NO_PUBLICATIONS.to_string()),
        },
    };
    Ok(with_cache_header(body, served.cache_hit))
}

async fn edit_profile(
    State(s): State<AppState>,
    body: Result<Json<EditProfileRequest>, JsonRejection>,
) -> ApiResult<Json<ProfileResponse>> {
    let Json(req) = body?;
    let p = blocking(&s, move |c| c.edit_profile(&req.name, &req.text)).await?;
    Ok(Json(ProfileResponse {
        profile: p.text,
        origin: p.origin,
        code: None,
    }))
}

async fn trends(State(s): State<AppState>, q: Result<Query<TrendsQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let range: TimeRange = q
        .range
        .parse()
        .map_err(|_| ApiError::bad_request("INVALID_RANGE", format!("range must be day, week or all, not {:?}", q.range)))?;
    let served = blocking(&s, move |c| c.generate_trends(&q.name, range)).await?;
    let b = served.value;
    Ok(with_cache_header(
        TrendsResponse {
            trending_papers: b.trending_papers,
            topics: b.topics,
            ideas: b.ideas,
            generated_at: b.generated_at,
        },
        served.cache_hit,
    ))
}

async fn chat(State(s): State<AppState>, body: Result<Json<ChatRequest>, JsonRejection>) -> ApiResult<Json<ChatResponse>> {
    let Json(req) = body?;
    let x = blocking(&s, move |c| c.answer_chat(&req.name, &req.question)).await?;
    Ok(Json(ChatResponse {
        exchange_id: x.id,
        answer_augmented: x.answer_augmented,
        answer_plain: x.answer_plain,
    }))
}

async fn get_exchange(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ExchangeResponse>> {
    let x = blocking(&s, move |c| c.exchange(&id).ok_or(ServiceError::ExchangeNotFound(id))).await?;
    Ok(Json(x.into()))
}

async fn feedback(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<Json<FeedbackResponse>> {
    let Json(req) = body?;
    let x = blocking(&s, move |c| c.apply_feedback(&id, req.verdict.into())).await?;
    let kept = x.kept().ok_or_else(|| ApiError::internal("feedback was not stored"))?;
    Ok(Json(FeedbackResponse { kept }))
}

async fn comment(
    State(s): State<AppState>,
    body: Result<Json<CommentRequest>, JsonRejection>,
) -> ApiResult<Json<CommentResponse>> {
    let Json(req) = body?;
    let summary = blocking(&s, move |c| c.record_saved_minutes(&req.name, req.minutes)).await?;
    Ok(Json(CommentResponse {
        ack: true,
        mean_minutes: summary.mean_minutes().unwrap_or(0.0),
    }))
}

async fn signup(State(s): State<AppState>, body: Result<Json<SignupRequest>, JsonRejection>) -> ApiResult<Json<AckResponse>> {
    let Json(req) = body?;
    blocking(&s, move |c| c.signup(&req.name, &req.email)).await?;
    Ok(Json(AckResponse { ack: true }))
}

async fn report(State(s): State<AppState>, body: Result<Json<ReportRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let served = blocking(&s, move |c| c.compose_weekly_report(&req.name)).await?;
    Ok(with_cache_header(
        ReportResponse {
            week: served.value.week,
            markdown: served.value.markdown,
        },
        served.cache_hit,
    ))
}

async fn health(State(s): State<AppState>) -> Json<HealthResponse> {
    let h = s.copilot.engine().health();
    Json(HealthResponse {
        status: "ok".into(),
        papers: h.papers,
        thoughts: h.thoughts,
        library_generation: h.library_generation,
        queue_depth: h.queue_depth,
        as_of: h.as_of,
        last_publish: h.last_publish,
    })
}

/// Runs the daily update for `date` (default: today) on the update worker.
async fn admin_update(
    State(s): State<AppState>,
    q: Result<Query<UpdateQuery>, QueryRejection>,
) -> ApiResult<Json<UpdateResponse>> {
    let Query(q) = q?;
    let date = q.date.unwrap_or_else(|| s.clock.today());
    let rx = s.copilot.engine().trigger_daily_update(date);
    let summary = tokio::task::spawn_blocking(move || rx.recv())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|_| ApiError::from(copilot_core::engine::EngineError::Stopped))??;
    Ok(Json(UpdateResponse {
        date: summary.date,
        new_papers: summary.new_papers,
        pool_rows_added: summary.pool_rows_added,
        duplicates: summary.duplicates,
        malformed: summary.malformed,
        generation: summary.generation,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route", false)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/profile", post(set_profile).put(edit_profile))
        .route("/trends", get(trends))
        .route("/chat", post(chat))
        .route("/chat/:id", get(get_exchange))
        .route("/chat/:id/feedback", post(feedback))
        .route("/comment", post(comment))
        .route("/signup", post(signup))
        .route("/report", post(report))
        .route("/health", get(health))
        .route("/admin/update", post(admin_update))
        .fallback(not_found)
        .with_state(state)
}

/// API routes plus static web client assets from `dir` for other paths.
pub fn router_with_static(state: AppState, dir: &Path) -> Router {
    router(state).fallback_service(tower_http::services::ServeDir::new(dir))
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
