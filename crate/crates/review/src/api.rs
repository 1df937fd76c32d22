//! The `/v1` HTTP API.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::{ReviewError, Result};
use crate::store::{
    BoundarySamples, CommitRequest, MapPayload, MapSummary, ReviewSession, Store, ThresholdPreview,
};

type AppState = Arc<Store>;

#[derive(Debug, Deserialize)]
struct MapQuery {
    #[serde(default)]
    full: bool,
}

#[derive(Debug, Deserialize)]
struct ThresholdQuery {
    t: f64,
}

#[derive(Debug, Deserialize)]
struct PatchesQuery {
    t: f64,
    #[serde(default = "default_n")]
    n: usize,
}

fn default_n() -> usize {
    8
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    map_id: String,
}

fn query<T>(q: std::result::Result<Query<T>, QueryRejection>) -> Result<T> {
    q.map(|Query(v)| v).map_err(|e| ReviewError::BadRequest(e.body_text()))
}

fn body<T>(b: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    b.map(|Json(v)| v).map_err(|e| ReviewError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(
    store: AppState,
    f: impl FnOnce(&Store) -> Result<T> + Send + 'static,
) -> Result<Json<T>> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ReviewError::BadRequest(format!("worker failed: {e}")))?
        .map(Json)
}

async fn list_maps(State(store): State<AppState>) -> Result<Json<Vec<MapSummary>>> {
    blocking(store, |s| s.list_maps()).await
}

async fn get_map(
    State(store): State<AppState>,
    Path(id): Path<String>,
    q: std::result::Result<Query<MapQuery>, QueryRejection>,
) -> Result<Json<MapPayload>> {
    let q = query(q)?;
    blocking(store, move |s| s.get_map(&id, q.full)).await
}

async fn preview(
    State(store): State<AppState>,
    Path(id): Path<String>,
    q: std::result::Result<Query<ThresholdQuery>, QueryRejection>,
) -> Result<Json<ThresholdPreview>> {
    let q = query(q)?;
    blocking(store, move |s| s.preview_threshold(&id, q.t)).await
}

async fn patches(
    State(store): State<AppState>,
    Path(id): Path<String>,
    q: std::result::Result<Query<PatchesQuery>, QueryRejection>,
) -> Result<Json<BoundarySamples>> {
    let q = query(q)?;
    blocking(store, move |s| s.sample_patches(&id, q.t, q.n)).await
}

async fn create_session(
    State(store): State<AppState>,
    b: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<ReviewSession>> {
    let b = body(b)?;
    blocking(store, move |s| s.create_session(&b.map_id)).await
}

async fn get_session(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<ReviewSession>> {
    blocking(store, move |s| s.session(&id)).await
}

async fn commit(
    State(store): State<AppState>,
    Path(id): Path<String>,
    b: std::result::Result<Json<CommitRequest>, JsonRejection>,
) -> Result<Json<ReviewSession>> {
    let b = body(b)?;
    blocking(store, move |s| s.commit(&id, &b)).await
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/maps", get(list_maps))
        .route("/v1/maps/{id}", get(get_map))
        .route("/v1/maps/{id}/preview", get(preview))
        .route("/v1/maps/{id}/patches", get(patches))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/commit", post(commit))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
