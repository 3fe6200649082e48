use std::path::Path;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::protocol::{StreamItem, StreamRecord, PROTOCOL_VERSION};
use crate::store::{SessionStore, Subscription};
use crate::ServiceError;

type Shared = Arc<SessionStore>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Validation { .. } => StatusCode::BAD_REQUEST,
            Self::IllegalAction { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::StaleRevision { .. } | Self::NotYourTurn | Self::GameOver => StatusCode::CONFLICT,
            Self::Storage(_) | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.payload())).into_response()
    }
}

pub fn router(store: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(view))
        .route("/v1/sessions/{id}/actions", post(act))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/hints", get(hints))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::Validation { field: if path == "." { "body".into() } else { path }, message: e.inner().to_string() }
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "version": PROTOCOL_VERSION, "status": "ok" }))
}

async fn create(State(store): State<Shared>, body: Bytes) -> Result<Response, ServiceError> {
    let request = parse(&body)?;
    let payload = blocking(move || store.create(request)).await?;
    Ok((StatusCode::CREATED, Json(payload)).into_response())
}

async fn list(State(store): State<Shared>) -> impl IntoResponse {
    Json(store.list())
}

async fn view(State(store): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(store.view(&id)?))
}

async fn act(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let request = parse(&body)?;
    Ok(Json(blocking(move || store.submit(&id, request)).await?))
}

async fn hints(State(store): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(move || store.hints(&id)).await?))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

fn line(item: StreamItem) -> Bytes {
    let mut buf = serde_json::to_vec(&StreamRecord::from(item)).expect("stream items serialize");
    buf.push(b'\n');
    Bytes::from(buf)
}

/// NDJSON: stored events from `from`, then live items until the game ends.
async fn events(
    State(store): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<EventsQuery>,
) -> Result<Response, ServiceError> {
    let Subscription { backlog, live, next_index } = store.subscribe(&id, query.from)?;
    let initial = futures_util::stream::iter(backlog.into_iter().map(|i| Ok::<_, std::convert::Infallible>(line(i))));
    let live = futures_util::stream::unfold((live, next_index), |(rx, next)| async move {
        let mut rx = rx?;
        loop {
            match rx.recv().await {
                // Already delivered in the backlog.
                Ok(StreamItem::Event { index, .. }) if index < next => continue,
                Ok(item @ StreamItem::Event { index, .. }) => return Some((Ok(line(item)), (Some(rx), index + 1))),
                Ok(item @ StreamItem::GameOver { .. }) => return Some((Ok(line(item)), (None, next))),
                Ok(item) => return Some((Ok(line(item)), (Some(rx), next))),
                Err(RecvError::Lagged(_)) => {
                    return Some((Ok(line(StreamItem::Dropped { resume_from: next })), (None, next)))
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let body = Body::from_stream(futures_util::StreamExt::chain(initial, live));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
