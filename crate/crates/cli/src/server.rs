//! Black-box prediction service: softmax rows in, nothing else out.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use graphmark::gnn::GnnModel;
use graphmark::graph::GraphFile;
use graphmark::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

/// Environment variable consulted for the bind address.
pub const BIND_ENV: &str = "GRAPHMARK_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictResponse {
    pub model_name: String,
    /// One softmax row per request node, in request order.
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

fn reject(status: StatusCode, field: Option<String>, error: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: error.into(), field })).into_response()
}

async fn health() -> &'static str {
    "ok"
}

async fn predict(State(model): State<Arc<GnnModel>>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return reject(StatusCode::BAD_REQUEST, None, "body is not UTF-8"),
    };
    let graph = match GraphFile::from_json(text) {
        Ok(g) => g,
        Err(Error::Parse { field, message }) => return reject(StatusCode::UNPROCESSABLE_ENTITY, Some(field), message),
        Err(e) => return reject(StatusCode::UNPROCESSABLE_ENTITY, None, e.to_string()),
    };
    if graph.labels().is_some() {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, Some("labels".into()), "labels must be omitted");
    }
    if let Err(e) = model.check_input(&graph) {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, Some("feature_dim".into()), e.to_string());
    }
    let m = Arc::clone(&model);
    let probs = match tokio::task::spawn_blocking(move || m.predict_proba(&graph)).await {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => return reject(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
        Err(e) => return reject(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
    };
    Json(PredictResponse {
        model_name: model.name.clone(),
        probabilities: probs.iter_rows().map(<[f64]>::to_vec).collect(),
    })
    .into_response()
}

pub fn router(model: Arc<GnnModel>) -> Router {
    Router::new().route("/predict", post(predict)).route("/health", get(health)).with_state(model)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()
}

/// Serves until ctrl-c.
pub fn serve_blocking(model: GnnModel, bind: &str, on_ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        on_ready(listener.local_addr()?);
        axum::serve(listener, router(Arc::new(model)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

/// A server on a background thread; dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn(model: GnnModel, bind: &str) -> std::io::Result<ServerHandle> {
    let rt = runtime()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(bind))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            axum::serve(listener, router(Arc::new(model)))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}
