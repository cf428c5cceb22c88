//! HTTP API.
//!
//! Errors are returned as `{"error": {"code", "message"}}` with a matching
//! status. Job streams are server-sent events named `status`, `token`,
//! `sources`, `done` and `failed`, each carrying a JSON payload.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;

use crate::error::ServiceError;
use crate::queue::{Job, JobEvent};
use crate::service::{Service, VectorizeRequest};
use crate::session::QueryOverrides;

const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(code = self.code(), error = %self, "request failed");
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Clone)]
struct AppState {
    service: Service,
    auth_token: Option<Arc<str>>,
}

/// Builds the router. With `auth_token` set every route except `/health`
/// requires `Authorization: Bearer <token>`; event streams also accept
/// `?token=<token>` because browser `EventSource` cannot send headers.
pub fn router(service: Service, auth_token: Option<String>) -> Router {
    let state = AppState {
        service,
        auth_token: auth_token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    Router::new()
        .route("/corpora", post(create_corpus).get(list_corpora))
        .route("/corpora/{name}", get(get_corpus))
        .route("/corpora/{name}/documents", post(add_documents))
        .route("/corpora/{name}/vectorize", post(vectorize))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/history", get(get_history))
        .route("/sessions/{id}/corpus", put(switch_corpus))
        .route("/sessions/{id}/query", post(submit_query))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/stream", get(stream_job))
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("authorization, content-type"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, PUT, OPTIONS"),
    );
    resp
}

async fn authorize(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(expected) = state.auth_token.as_deref() else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query_token = req.uri().query().and_then(|q| {
        q.split('&')
            .find_map(|kv| kv.strip_prefix("token="))
    });
    if bearer == Some(expected) || query_token == Some(expected) {
        next.run(req).await
    } else {
        ServiceError::Unauthorized.into_response()
    }
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "backend": state.service.backend_id(),
        "queue_depth": state.service.queue_depth(),
    }))
}

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

#[derive(Deserialize)]
struct CreateCorpus {
    name: String,
}

async fn create_corpus(State(s): State<AppState>, Json(body): Json<CreateCorpus>) -> ApiResult<impl IntoResponse> {
    let info = s.service.create_corpus(&body.name)?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_corpora(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.service.list_corpora())
}

async fn get_corpus(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.service.corpus(&name)?))
}

/// Accepts either a JSONL manifest body (paths relative to the corpus
/// upload directory) or `multipart/form-data` with file parts and an
/// optional part named `manifest`.
async fn add_documents(
    State(s): State<AppState>,
    Path(name): Path<String>,
    req: Request,
) -> ApiResult<impl IntoResponse> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let service = s.service.clone();
    let summary = if is_multipart {
        let mut multipart = Multipart::from_request(req, &())
            .await
            .map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        let mut files = Vec::new();
        let mut manifest = None;
        while let Some(field) = multipart
            .next_field()
            .await
            .map_err(|e| ServiceError::BadRequest(e.body_text()))?
        {
            let field_name = field.name().unwrap_or_default().to_owned();
            let file_name = field.file_name().map(str::to_owned);
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ServiceError::BadRequest(e.body_text()))?
                .to_vec();
            match file_name {
                _ if field_name == "manifest" => manifest = Some(bytes),
                Some(f) => files.push((f, bytes)),
                None => {
                    return Err(ServiceError::BadRequest(format!(
                        "multipart field {field_name:?} is neither a file nor the manifest"
                    )))
                }
            }
        }
        blocking(move || service.add_uploaded_files(&name, files, manifest)).await?
    } else {
        let body = axum::body::to_bytes(req.into_body(), MAX_BODY_BYTES)
            .await
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        blocking(move || {
            let uploads = service.uploads_dir(&name)?;
            service.add_documents(&name, &body, &uploads, true)
        })
        .await?
    };
    Ok(Json(summary))
}

async fn vectorize(
    State(s): State<AppState>,
    Path(name): Path<String>,
    body: Option<Json<VectorizeRequest>>,
) -> ApiResult<impl IntoResponse> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let service = s.service.clone();
    let meta = blocking(move || service.vectorize(&name, &req)).await?;
    Ok(Json(meta))
}

#[derive(Deserialize)]
struct CreateSession {
    corpus: String,
    #[serde(default)]
    defaults: QueryOverrides,
}

async fn create_session(State(s): State<AppState>, Json(body): Json<CreateSession>) -> ApiResult<impl IntoResponse> {
    let service = s.service.clone();
    let session = blocking(move || service.create_session(&body.corpus, body.defaults)).await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": session.session_id,
            "corpus": session.corpus,
            "created_at": session.created_at,
        })),
    ))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.service.session(&id)?))
}

async fn get_history(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let session = s.service.session(&id)?;
    Ok(Json(json!({
        "session_id": session.session_id,
        "corpus": session.corpus,
        "history": session.history,
    })))
}

#[derive(Deserialize)]
struct SwitchCorpus {
    corpus: String,
}

async fn switch_corpus(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SwitchCorpus>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.service.switch_corpus(&id, &body.corpus)?))
}

#[derive(Deserialize)]
struct QueryBody {
    text: String,
    #[serde(flatten)]
    overrides: QueryOverrides,
}

async fn submit_query(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<QueryBody>,
) -> ApiResult<impl IntoResponse> {
    let job = s.service.submit_query(&id, &body.text, body.overrides)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.id}))))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.service.job(id)?.snapshot()))
}

#[derive(Deserialize)]
struct StreamParams {
    /// Skip this many already-delivered events (resumption).
    #[serde(default)]
    from: usize,
}

async fn stream_job(
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Query(params): Query<StreamParams>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let job = s.service.job(id)?;
    Ok(Sse::new(event_stream(job, params.from)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

fn to_sse(index: usize, e: &JobEvent) -> Event {
    Event::default()
        .event(e.name())
        .id(index.to_string())
        .data(e.data().to_string())
}

/// Replays the job's log from `from` and follows it until the terminal event.
fn event_stream(job: Arc<Job>, from: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    stream::unfold(
        (job, rx, from, false),
        |(job, mut rx, mut next, finished)| async move {
            if finished {
                return None;
            }
            loop {
                rx.borrow_and_update();
                let events = job.events_since(next);
                if !events.is_empty() {
                    let mut batch = Vec::with_capacity(events.len());
                    let mut done = false;
                    for e in &events {
                        batch.push(Ok(to_sse(next, e)));
                        next += 1;
                        if e.is_terminal() {
                            done = true;
                            break;
                        }
                    }
                    return Some((stream::iter(batch), (job, rx, next, done)));
                }
                if rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    )
    .flatten()
}
