//! JSON routes over [`SessionService`].
//!
//! | method | path                     | success |
//! |--------|--------------------------|---------|
//! | POST   | `/sessions`              | 201     |
//! | GET    | `/sessions/{id}/display` | 200     |
//! | POST   | `/sessions/{id}/labels`  | 200     |
//! | GET    | `/sessions/{id}/metrics` | 200     |
//! | GET    | `/assets/...`            | 200     |
//!
//! Failures carry a `{code, message}` body.

use std::collections::HashSet;
use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use frugal_core::SampleId;
use serde::de::{DeserializeOwned, MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use tower_http::services::ServeDir;

use crate::{CreateSession, ServiceError, ServiceResult, SessionService};

/// Body of `POST /sessions/{id}/labels`: `{"labels": {"<sample id>": ±1, ...}}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsBody {
    #[serde(deserialize_with = "unique_label_map")]
    pub labels: Vec<(SampleId, i64)>,
}

fn unique_label_map<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<(SampleId, i64)>, D::Error> {
    struct Entries;

    impl<'de> Visitor<'de> for Entries {
        type Value = Vec<(SampleId, i64)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from sample id to -1 or +1")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            while let Some((key, value)) = map.next_entry::<String, i64>()? {
                let id: SampleId = key
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("`{key}` is not a sample id")))?;
                if !seen.insert(id) {
                    return Err(serde::de::Error::custom(format!("duplicate label for sample {id}")));
                }
                out.push((id, value));
            }
            Ok(out)
        }
    }

    de.deserialize_map(Entries)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Unprocessable(format!("malformed request: {e}")))
}

/// Runs CPU-bound service work off the async executor.
async fn blocking<T, F>(f: F) -> ServiceResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ServiceResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn create(State(svc): State<Arc<SessionService>>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let request: CreateSession = parse(&body)?;
    let created = blocking(move || svc.create_session(&request)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn display(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ServiceResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.get_display(&id)).await?))
}

async fn labels(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<impl IntoResponse> {
    let request: LabelsBody = parse(&body)?;
    Ok(Json(blocking(move || svc.submit_labels(&id, &request.labels)).await?))
}

async fn metrics(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ServiceResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.get_metrics(&id)).await?))
}

async fn fallback() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

/// Routes over `service`; thumbnails under `assets` are served at `/assets`.
pub fn router(service: Arc<SessionService>, assets: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/display", get(display))
        .route("/sessions/{id}/labels", post(labels))
        .route("/sessions/{id}/metrics", get(metrics))
        .fallback(fallback)
        .with_state(service);
    if let Some(dir) = assets {
        app = app.nest_service("/assets", ServeDir::new(dir));
    }
    app
}

pub async fn serve(addr: SocketAddr, service: Arc<SessionService>, assets: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service, assets)).await
}
