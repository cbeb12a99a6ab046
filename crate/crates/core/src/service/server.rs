//! Async TCP front end.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use super::protocol::{codes, decode_request, WireResponse};
use super::Service;
use crate::backend::{BackendRegistry, MockBackend, StatevectorBackend};
use crate::qpm::{Qpm, QpmError};
use crate::qtm::SchedulerMode;
use crate::resource::NodeSpec;

/// A backend to register at startup.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Statevector { name: String },
    Mock { name: String, latency: Duration },
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Statevector { name } | BackendSpec::Mock { name, .. } => name,
        }
    }
}

/// Accepted forms: `statevector`, `mock`, `mock=SECONDS`, and `NAME:KIND`
/// with `KIND` one of the former.
impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, kind) = match s.split_once(':') {
            Some((n, k)) if !n.is_empty() => (Some(n.to_string()), k),
            Some(_) => return Err(format!("empty backend name in '{s}'")),
            None => (None, s),
        };
        let (kind, latency) = match kind.split_once('=') {
            Some((k, l)) => (k, Some(l)),
            None => (kind, None),
        };
        match (kind, latency) {
            ("statevector", None) => Ok(BackendSpec::Statevector {
                name: name.unwrap_or_else(|| "statevector".into()),
            }),
            ("mock", lat) => {
                let latency = match lat {
                    None => Duration::ZERO,
                    Some(l) => {
                        let secs: f64 = l.parse().map_err(|_| format!("bad mock latency '{l}'"))?;
                        Duration::try_from_secs_f64(secs).map_err(|_| format!("bad mock latency '{l}'"))?
                    }
                };
                Ok(BackendSpec::Mock {
                    name: name.unwrap_or_else(|| "mock".into()),
                    latency,
                })
            }
            _ => Err(format!("unknown backend '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub nodes: usize,
    pub slots_per_node: usize,
    pub mode: SchedulerMode,
    /// Registered in order; the first is the default. Empty means
    /// `statevector` plus a zero-latency `mock`.
    pub backends: Vec<BackendSpec>,
    /// How long shutdown waits for running tasks.
    pub grace: Duration,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 7450,
            nodes: 2,
            slots_per_node: 8,
            mode: SchedulerMode::ManyJob,
            backends: Vec::new(),
            grace: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<QpmError> for ServeError {
    fn from(e: QpmError) -> Self {
        ServeError::Config(e.to_string())
    }
}

fn build_qpm(config: &ServeConfig) -> Result<Qpm, ServeError> {
    if config.nodes == 0 || config.slots_per_node == 0 {
        return Err(ServeError::Config("nodes and slots per node must be at least 1".into()));
    }
    let registry = if config.backends.is_empty() {
        BackendRegistry::with_defaults()
    } else {
        let r = BackendRegistry::new();
        for spec in &config.backends {
            let backend: Arc<dyn crate::backend::Backend> = match spec {
                BackendSpec::Statevector { name } => Arc::new(StatevectorBackend::new(name.clone())),
                BackendSpec::Mock { name, latency } => Arc::new(MockBackend::new(name.clone(), *latency)),
            };
            r.register(backend, false)
                .map_err(|e| ServeError::Config(e.to_string()))?;
        }
        r
    };
    Ok(Qpm::with_registry(
        NodeSpec::homogeneous(config.nodes, config.slots_per_node),
        config.mode,
        registry,
    )?)
}

/// A running server. Dropping it without calling [`ServerHandle::shutdown`]
/// leaves the accept loop running until the runtime stops.
pub struct ServerHandle {
    addr: SocketAddr,
    service: Arc<Service>,
    stop: watch::Sender<bool>,
    accept: JoinHandle<()>,
    grace: Duration,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Stop accepting, wait up to the grace period for running tasks, then
    /// cancel whatever is still queued and close all connections.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.accept.await;
        let qpm = self.service.qpm().clone();
        let grace = self.grace;
        let _ = tokio::task::spawn_blocking(move || {
            let sched = qpm.scheduler();
            let deadline = std::time::Instant::now() + grace;
            // Let running work finish; queued work is cancelled once nothing
            // more can be dispatched in time.
            while sched.running() > 0 && std::time::Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(10));
            }
            let dropped = sched.shutdown("server shutting down");
            if dropped > 0 {
                log::info!("cancelled {dropped} queued task(s) at shutdown");
            }
        })
        .await;
    }
}

/// Bind and start serving on the current tokio runtime.
pub async fn serve(config: ServeConfig) -> Result<ServerHandle, ServeError> {
    let qpm = build_qpm(&config)?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = TcpListener::bind(&addr).await.map_err(|source| ServeError::Bind {
        addr: addr.clone(),
        source,
    })?;
    let local = listener
        .local_addr()
        .map_err(|source| ServeError::Bind { addr, source })?;
    let service = Arc::new(Service::new(qpm));
    let (stop, stop_rx) = watch::channel(false);
    let accept = tokio::spawn(accept_loop(listener, service.clone(), stop_rx));
    log::info!("listening on {local}");
    Ok(ServerHandle {
        addr: local,
        service,
        stop,
        accept,
        grace: config.grace,
    })
}

async fn accept_loop(listener: TcpListener, service: Arc<Service>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    tokio::spawn(connection(stream, service.clone(), stop.clone()));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
        }
    }
}

async fn connection(stream: TcpStream, service: Arc<Service>, mut stop: watch::Receiver<bool>) {
    let session = service.open_session();
    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        while let Some(mut line) = rx.recv().await {
            line.push('\n');
            if wr.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
        let _ = wr.shutdown().await;
    });

    let inflight: Arc<Mutex<HashSet<String>>> = Arc::default();
    let mut lines = BufReader::new(rd).lines();
    loop {
        let line = tokio::select! {
            _ = stop.changed() => break,
            line = lines.next_line() => line,
        };
        let line = match line {
            Ok(Some(l)) => l,
            Ok(None) => break,
            Err(e) => {
                let _ = tx.send(
                    WireResponse::failure(
                        serde_json::Value::Null,
                        codes::VALIDATION,
                        format!("malformed frame: {e}"),
                    )
                    .to_line(),
                );
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let req = match decode_request(&line) {
            Ok(r) => r,
            Err(e) => {
                let _ =
                    tx.send(WireResponse::failure(serde_json::Value::Null, codes::VALIDATION, e.to_string()).to_line());
                break;
            }
        };
        let key = req.id.to_string();
        if !inflight.lock().unwrap_or_else(|e| e.into_inner()).insert(key.clone()) {
            let _ = tx.send(
                WireResponse::failure(
                    req.id,
                    codes::VALIDATION,
                    format!("request id {key} is already in flight"),
                )
                .to_line(),
            );
            continue;
        }
        let (service, tx, inflight) = (service.clone(), tx.clone(), inflight.clone());
        tokio::spawn(async move {
            let resp = tokio::task::spawn_blocking(move || service.dispatch(session, req))
                .await
                .unwrap_or_else(|e| {
                    WireResponse::failure(serde_json::Value::Null, codes::BACKEND, format!("internal error: {e}"))
                });
            inflight.lock().unwrap_or_else(|e| e.into_inner()).remove(&key);
            let _ = tx.send(resp.to_line());
        });
    }
    // Outstanding requests hold sender clones, so the writer drains their
    // responses before closing.
    drop(tx);
    let _ = writer.await;
    service.close_session(session);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_spec_parsing() {
        assert_eq!(
            "mock=0.2".parse::<BackendSpec>().unwrap(),
            BackendSpec::Mock {
                name: "mock".into(),
                latency: Duration::from_millis(200)
            }
        );
        assert_eq!(
            "fast:statevector".parse::<BackendSpec>().unwrap(),
            BackendSpec::Statevector { name: "fast".into() }
        );
        assert_eq!("slow:mock=1".parse::<BackendSpec>().unwrap().name(), "slow");
        for bad in ["gpu", "mock=x", "mock=-1", ":mock", "statevector=1"] {
            assert!(bad.parse::<BackendSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        let cfg = ServeConfig {
            nodes: 0,
            ..ServeConfig::default()
        };
        assert!(matches!(build_qpm(&cfg), Err(ServeError::Config(_))));
        let cfg = ServeConfig {
            backends: vec![
                BackendSpec::Statevector { name: "a".into() },
                BackendSpec::Statevector { name: "a".into() },
            ],
            ..ServeConfig::default()
        };
        assert!(matches!(build_qpm(&cfg), Err(ServeError::Config(_))));
    }
}
