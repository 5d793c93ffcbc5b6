use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::{oneshot, Semaphore};

use super::{LogitProvider, LogitRequest, ModelError};
use crate::tokenization::Vocabulary;

struct AppState {
    provider: Arc<dyn LogitProvider>,
    vocab_text: String,
    inflight: Option<Semaphore>,
    busy_injections: AtomicUsize,
}

/// Serving knobs.
#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Answer 503 when more than this many requests are in flight.
    pub max_inflight: Option<usize>,
    /// Answer 503 to the first N logit requests (fault injection for
    /// client retry tests).
    pub inject_busy: usize,
}

fn router(provider: Arc<dyn LogitProvider>, vocab: &Vocabulary, opts: &ServeOptions) -> Router {
    let state = Arc::new(AppState {
        provider,
        vocab_text: vocab.to_file_string(),
        inflight: opts.max_inflight.map(Semaphore::new),
        busy_injections: AtomicUsize::new(opts.inject_busy),
    });
    Router::new()
        .route("/v1/logits", post(logits))
        .route("/v1/vocab", get(vocab_file))
        .with_state(state)
}

async fn vocab_file(State(state): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], state.vocab_text.clone()).into_response()
}

async fn logits(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    if state
        .busy_injections
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"}))).into_response();
    }
    let _permit = match &state.inflight {
        Some(sem) => match sem.try_acquire() {
            Ok(p) => Some(p),
            Err(_) => return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"}))).into_response(),
        },
        None => None,
    };
    let req: LogitRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({"error": e.to_string()}))).into_response(),
    };
    let provider = state.provider.clone();
    let result = tokio::task::spawn_blocking(move || provider.next_logits(&req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(ModelError::ContextOverflow { len, limit })) => (
            StatusCode::PAYLOAD_TOO_LARGE,
            Json(json!({"error": "context overflow", "len": len, "limit": limit})),
        )
            .into_response(),
        Ok(Err(ModelError::InvalidRequest(msg))) => {
            (StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()
        }
        Ok(Err(e)) if e.is_backend() => {
            (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": e.to_string()}))).into_response()
        }
        Ok(Err(e)) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": e.to_string()}))).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": e.to_string()}))).into_response(),
    }
}

/// Serve `provider` until the process exits. Prints nothing; the caller
/// learns the bound address through `on_bound`.
pub fn serve(
    provider: Arc<dyn LogitProvider>,
    vocab: &Vocabulary,
    addr: SocketAddr,
    opts: ServeOptions,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ModelError> {
    let app = router(provider, vocab, &opts);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ModelError::Setup(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ModelError::Setup(e.to_string()))?;
        let bound = listener.local_addr().map_err(|e| ModelError::Setup(e.to_string()))?;
        on_bound(bound);
        axum::serve(listener, app).await.map_err(|e| ModelError::Setup(e.to_string()))
    })
}

/// A server running on a background thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
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

/// Start serving on `addr` (use port 0 for an ephemeral port) in a
/// background thread.
pub fn spawn_server(
    provider: Arc<dyn LogitProvider>,
    vocab: &Vocabulary,
    addr: SocketAddr,
    opts: ServeOptions,
) -> Result<ServerHandle, ModelError> {
    let app = router(provider, vocab, &opts);
    let (tx, rx) = oneshot::channel::<()>();
    let (bound_tx, bound_rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || {
        let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build() {
            Ok(rt) => rt,
            Err(e) => {
                let _ = bound_tx.send(Err(ModelError::Setup(e.to_string())));
                return;
            }
        };
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(addr).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = bound_tx.send(Err(ModelError::Setup(e.to_string())));
                    return;
                }
            };
            let _ = bound_tx.send(listener.local_addr().map_err(|e| ModelError::Setup(e.to_string())));
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    let addr = bound_rx
        .recv()
        .map_err(|_| ModelError::Setup("server thread exited before binding".into()))??;
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

