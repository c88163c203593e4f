use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};
use tracing::{error, info};

use crate::agents::DebateBand;
use crate::store::{FeedbackVerdict, OperatorFeedback, QueryFilter, StoreError, ThresholdChange};

use super::run::Shared;
use super::PipelineError;

/// Running HTTP interface. Stops when dropped.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackBody {
    pub verdict: FeedbackVerdict,
    pub operator_id: String,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AckBody {
    #[serde(default)]
    pub operator_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyView {
    pub alert_threshold: f64,
    pub configured_alert_threshold: f64,
    pub debate_band: DebateBand,
    pub max_debate_rounds: u32,
    pub high_risk_threshold: f64,
    pub threshold_history: Vec<ThresholdChange>,
}

/// Error body: `{"error": "<Kind>", "message": "..."}`.
struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1, "message": self.2 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::UnknownIncident(_) => ApiError(StatusCode::NOT_FOUND, "UnknownIncident", message),
            StoreError::FeedbackOnNonAlert(_) => {
                ApiError(StatusCode::CONFLICT, "FeedbackOnNonAlert", message)
            }
            StoreError::StorageFull(_) => {
                ApiError(StatusCode::INSUFFICIENT_STORAGE, "StorageFull", message)
            }
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", message),
        }
    }
}

type AppState = Arc<Shared>;

pub(crate) fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/metrics", get(metrics))
        .route("/api/incidents", get(list_incidents))
        .route("/api/incidents/{id}", get(get_incident))
        .route("/api/incidents/{id}/feedback", post(post_feedback))
        .route("/api/incidents/{id}/ack", post(post_ack))
        .route("/api/policy", get(policy))
        .route("/api/stream", get(stream))
        .route("/evidence/{incident}/{frame}", get(evidence))
        .with_state(shared)
}

/// Binds `addr` and serves on a dedicated runtime thread.
pub(crate) fn serve(addr: SocketAddr, shared: Arc<Shared>) -> Result<HttpServer, PipelineError> {
    let listener = std::net::TcpListener::bind(addr).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            PipelineError::PortInUse(addr)
        } else {
            PipelineError::FatalConfig(format!("http.bind {addr}: {e}"))
        }
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|e| PipelineError::FatalConfig(e.to_string()))?;
    let bound = listener
        .local_addr()
        .map_err(|e| PipelineError::FatalConfig(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .thread_name("http")
        .enable_all()
        .build()
        .map_err(|e| PipelineError::FatalConfig(format!("http runtime: {e}")))?;
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(shared);
    let thread = std::thread::Builder::new()
        .name("http-server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        error!(error = %e, "http listener setup failed");
                        return;
                    }
                };
                let server = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                });
                if let Err(e) = server.await {
                    error!(error = %e, "http server stopped");
                }
            });
            // open SSE streams would otherwise keep the runtime alive
            runtime.shutdown_background();
        })
        .map_err(|e| PipelineError::FatalConfig(e.to_string()))?;
    info!(addr = %bound, "http interface listening");
    Ok(HttpServer {
        addr: bound,
        stop: Some(stop_tx),
        thread: Some(thread),
    })
}

async fn healthz(State(s): State<AppState>) -> Json<serde_json::Value> {
    let running = s.running.load(Ordering::SeqCst);
    Json(json!({
        "status": if running { "ok" } else { "finished" },
        "cycles_completed": s.metrics.cycles_completed(),
        "queue_depth": s.queue.len(),
    }))
}

async fn metrics(State(s): State<AppState>) -> Response {
    Json(s.report()).into_response()
}

async fn list_incidents(State(s): State<AppState>, Query(filter): Query<QueryFilter>) -> Response {
    Json(s.store.query(&filter)).into_response()
}

async fn get_incident(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let incident = s.store.get(&id).ok_or(StoreError::UnknownIncident(id))?;
    Ok(Json(incident).into_response())
}

async fn post_feedback(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<FeedbackBody>,
) -> Result<Response, ApiError> {
    if body.operator_id.trim().is_empty() {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "InvalidFeedback",
            "operator_id is required".into(),
        ));
    }
    let feedback = OperatorFeedback {
        verdict: body.verdict,
        operator_id: body.operator_id,
        submitted_at: Utc::now(),
        note: body.note,
    };
    let store = s.store.clone();
    let incident_id = id.clone();
    let state = tokio::task::spawn_blocking(move || store.append_feedback(&incident_id, feedback))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    Ok(Json(json!({
        "incident_id": id,
        "alert_threshold": state.alert_threshold,
        "threshold": state,
    }))
    .into_response())
}

async fn post_ack(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<AckBody>>,
) -> Result<Response, ApiError> {
    let operator = body.and_then(|b| b.0.operator_id);
    let store = s.store.clone();
    let incident_id = id.clone();
    let incident = tokio::task::spawn_blocking(move || store.record_ack(&incident_id, Utc::now()))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let acked_at: Option<DateTime<Utc>> = incident.acked_at;
    info!(incident = %id, operator = ?operator, "alert acknowledged");
    Ok(Json(json!({ "incident_id": id, "acked_at": acked_at })).into_response())
}

async fn policy(State(s): State<AppState>) -> Json<PolicyView> {
    let threshold = s.store.threshold();
    Json(PolicyView {
        alert_threshold: threshold.alert_threshold,
        configured_alert_threshold: s.policy.alert_threshold,
        debate_band: s.policy.debate_band,
        max_debate_rounds: s.policy.max_debate_rounds,
        high_risk_threshold: s.policy.high_risk_threshold,
        threshold_history: threshold.history,
    })
}

async fn evidence(
    State(s): State<AppState>,
    Path((incident, frame)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let not_found = || {
        ApiError(
            StatusCode::NOT_FOUND,
            "EvidenceNotFound",
            format!("no evidence {incident}/{frame}"),
        )
    };
    let seq: u64 = frame
        .strip_suffix(".png")
        .and_then(|n| n.parse().ok())
        .ok_or_else(not_found)?;
    let path = s.store.evidence_file(&incident, seq).ok_or_else(not_found)?;
    let bytes = std::fs::read(&path).map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.events.subscribe();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event(ev.event)
                        .json_data(ev.data)
                        .unwrap_or_else(|_| Event::default().comment("unserializable event"));
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    return Some((Ok(Event::default().event("lagged").data(n.to_string())), rx));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}
