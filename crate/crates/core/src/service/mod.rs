//! Network service exposing the platform manager over newline-delimited JSON.
//!
//! Each TCP connection is one client session. Requests on a connection may be
//! pipelined; responses carry the request `id` and may arrive out of order.

pub mod client;
pub mod protocol;
pub mod server;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::qpm::{Cid, Qpm, QpmError, TaskInfo};
use crate::qtm::{self, EnsembleError, EnsembleSpec, QtmError, SessionId};

pub use client::{Client, ClientError, DEFAULT_ADDR};
pub use protocol::{codes, WireError, WireRequest, WireResponse};
pub use server::{serve, BackendSpec, ServeConfig, ServeError, ServerHandle};

/// Wire error code for a platform-manager error.
pub fn error_code(e: &QpmError) -> i64 {
    match e {
        QpmError::InvalidState { .. } | QpmError::Scheduler(QtmError::Busy(_)) => codes::INVALID_STATE,
        QpmError::Scheduler(_) => codes::RESOURCE,
        QpmError::Backend(_) => codes::BACKEND,
        _ => codes::VALIDATION,
    }
}

fn ensemble_code(e: &EnsembleError) -> i64 {
    match e {
        EnsembleError::Qpm(q) => error_code(q),
        EnsembleError::Empty | EnsembleError::WidthMismatch { .. } => codes::VALIDATION,
        EnsembleError::MemberFailed { .. } => codes::BACKEND,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub uptime_seconds: f64,
    pub connections_total: u64,
    pub connections_open: u64,
    pub requests: u64,
    pub tasks_created: u64,
    pub tasks_done: u64,
    pub tasks_failed: u64,
    pub active_tasks: usize,
    pub running_tasks: usize,
    pub mode: String,
}

#[derive(Deserialize)]
struct CidParams {
    cid: Cid,
}

/// Method dispatch shared by all connections. Calls block; the server runs
/// them off the async reactor.
#[derive(Debug)]
pub struct Service {
    qpm: Qpm,
    started: Instant,
    connections_total: AtomicU64,
    connections_open: AtomicU64,
    requests: AtomicU64,
}

type Outcome = Result<Value, (i64, String)>;

fn params<T: DeserializeOwned>(p: Value) -> Result<T, (i64, String)> {
    serde_json::from_value(p).map_err(|e| (codes::VALIDATION, format!("invalid params: {e}")))
}

fn qpm_err(e: QpmError) -> (i64, String) {
    (error_code(&e), e.to_string())
}

fn to_value<T: Serialize>(v: T) -> Outcome {
    Ok(serde_json::to_value(v).expect("wire types serialize"))
}

impl Service {
    pub fn new(qpm: Qpm) -> Self {
        Service {
            qpm,
            started: Instant::now(),
            connections_total: AtomicU64::new(0),
            connections_open: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        }
    }

    pub fn qpm(&self) -> &Qpm {
        &self.qpm
    }

    pub fn open_session(&self) -> SessionId {
        self.connections_total.fetch_add(1, Ordering::Relaxed);
        self.connections_open.fetch_add(1, Ordering::Relaxed);
        self.qpm.scheduler().open_session()
    }

    pub fn close_session(&self, session: SessionId) {
        self.connections_open.fetch_sub(1, Ordering::Relaxed);
        self.qpm.scheduler().close_session(session);
    }

    pub fn stats(&self) -> ServerStats {
        let c = self.qpm.counters();
        let sched = self.qpm.scheduler();
        ServerStats {
            uptime_seconds: self.started.elapsed().as_secs_f64(),
            connections_total: self.connections_total.load(Ordering::Relaxed),
            connections_open: self.connections_open.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
            tasks_created: c.created,
            tasks_done: c.done,
            tasks_failed: c.failed,
            active_tasks: sched.active(),
            running_tasks: sched.running(),
            mode: sched.mode().name().to_string(),
        }
    }

    /// Handle one request on behalf of `session`.
    pub fn dispatch(&self, session: SessionId, req: WireRequest) -> WireResponse {
        self.requests.fetch_add(1, Ordering::Relaxed);
        match self.call(session, &req.method, req.params) {
            Ok(v) => WireResponse::success(req.id, v),
            Err((code, msg)) => WireResponse::failure(req.id, code, msg),
        }
    }

    fn call(&self, session: SessionId, method: &str, p: Value) -> Outcome {
        let q = &self.qpm;
        match method {
            "create_circuit" => {
                let info: TaskInfo = params(p)?;
                let cid = q.create_circuit_in(session, info).map_err(qpm_err)?;
                Ok(json!({ "cid": cid }))
            }
            "sync_run" => {
                let CidParams { cid } = params(p)?;
                match q.sync_run(&cid) {
                    Ok(out) => to_value(out),
                    Err(e) => Err(qpm_err(e)),
                }
            }
            "async_run" => {
                let CidParams { cid } = params(p)?;
                let state = q.async_run(&cid).map_err(qpm_err)?;
                Ok(json!({ "cid": cid, "state": state }))
            }
            "get_result" => {
                let CidParams { cid } = params(p)?;
                to_value(q.get_result(&cid).map_err(qpm_err)?)
            }
            "run_ensemble" => {
                let spec: EnsembleSpec = params(p)?;
                qtm::run_ensemble(q, &spec)
                    .map_err(|e| (ensemble_code(&e), e.to_string()))
                    .and_then(to_value)
            }
            "list_backends" => to_value(q.list_backends()),
            "utilization" => {
                let pool = q.utilization();
                let session_view = q.scheduler().session_utilization(session).ok();
                Ok(json!({
                    "mode": q.scheduler().mode(),
                    "pool": pool,
                    "session": session_view,
                }))
            }
            "server_stats" => to_value(self.stats()),
            other => Err((codes::UNKNOWN_METHOD, format!("unknown method '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ghz;
    use crate::qasm::emit;
    use crate::qtm::SchedulerMode;
    use crate::resource::NodeSpec;

    fn service() -> Service {
        Service::new(Qpm::new(NodeSpec::homogeneous(2, 4), SchedulerMode::ManyJob).unwrap())
    }

    fn req(method: &str, params: Value) -> WireRequest {
        WireRequest {
            id: json!("r"),
            method: method.into(),
            params,
        }
    }

    #[test]
    fn create_and_sync_run() {
        let s = service();
        let sess = s.open_session();
        let info = TaskInfo::new(emit(&ghz(3).unwrap()), 3, 100).with_seed(4);
        let r = s.dispatch(sess, req("create_circuit", serde_json::to_value(&info).unwrap()));
        assert!(r.ok, "{r:?}");
        let cid = r.result.unwrap()["cid"].clone();
        let r = s.dispatch(sess, req("sync_run", json!({ "cid": cid })));
        let out = r.result.unwrap();
        assert_eq!(out["rc"], json!(0));
        assert_eq!(out["result"]["shots"], json!(100));
        let again = s.dispatch(sess, req("sync_run", json!({ "cid": cid })));
        assert_eq!(again.error.unwrap().code, codes::INVALID_STATE);
    }

    #[test]
    fn error_codes() {
        let s = service();
        let sess = s.open_session();
        let r = s.dispatch(sess, req("frobnicate", json!({})));
        assert_eq!(r.error.unwrap().code, codes::UNKNOWN_METHOD);
        let r = s.dispatch(
            sess,
            req(
                "create_circuit",
                json!({"qasm": "garbage", "num_qubits": 1, "num_shots": 1}),
            ),
        );
        assert_eq!(r.error.unwrap().code, codes::VALIDATION);
        let r = s.dispatch(sess, req("get_result", json!({"cid": "c404"})));
        assert_eq!(r.error.unwrap().code, codes::VALIDATION);
        let r = s.dispatch(sess, req("sync_run", json!({})));
        assert_eq!(r.error.unwrap().code, codes::VALIDATION);
        let big = TaskInfo::new(emit(&ghz(12).unwrap()), 12, 1).with_backend("mock");
        let small = Service::new(Qpm::new(NodeSpec::homogeneous(1, 1), SchedulerMode::ManyJob).unwrap());
        let cid = small
            .dispatch(0, req("create_circuit", serde_json::to_value(&big).unwrap()))
            .result
            .unwrap()["cid"]
            .clone();
        let r = small.dispatch(0, req("sync_run", json!({ "cid": cid })));
        assert_eq!(r.error.unwrap().code, codes::RESOURCE);
    }

    #[test]
    fn introspection_methods() {
        let s = service();
        let sess = s.open_session();
        let b = s.dispatch(sess, req("list_backends", json!({}))).result.unwrap();
        assert_eq!(b[0]["name"], json!("statevector"));
        let u = s.dispatch(sess, req("utilization", json!({}))).result.unwrap();
        assert_eq!(u["pool"]["nodes"].as_array().unwrap().len(), 2);
        assert_eq!(u["mode"]["mode"], json!("many_job"));
        let st = s.dispatch(sess, req("server_stats", json!({}))).result.unwrap();
        assert_eq!(st["connections_open"], json!(1));
        assert_eq!(st["requests"], json!(3));
    }

    #[test]
    fn ensemble_over_wire() {
        let s = service();
        let info = TaskInfo::new(emit(&ghz(2).unwrap()), 2, 50).with_seed(9);
        let a = s
            .dispatch(0, req("create_circuit", serde_json::to_value(&info).unwrap()))
            .result
            .unwrap()["cid"]
            .clone();
        let r = s.dispatch(0, req("run_ensemble", json!({"cids": [a], "repetitions": 3})));
        let res = r.result.unwrap();
        assert_eq!(res["shots"], json!(150));
        let r = s.dispatch(0, req("run_ensemble", json!({"cids": [], "repetitions": 3})));
        assert_eq!(r.error.unwrap().code, codes::VALIDATION);
    }
}
