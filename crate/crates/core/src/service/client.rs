//! Blocking client for the wire protocol. One request in flight at a time.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::protocol::{decode_response, encode_request, WireRequest};
use super::ServerStats;
use crate::backend::BackendDescriptor;
use crate::qpm::{Cid, CircuitHandle, SyncRunOutput, TaskInfo, TaskState};
use crate::sim::ExecutionResult;

pub const DEFAULT_ADDR: &str = "127.0.0.1:7450";
/// Environment variable overriding [`DEFAULT_ADDR`].
pub const ADDR_ENV: &str = "QFW_ADDR";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connection error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code}: {message}")]
    Server { code: i64, message: String },
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
        })
    }

    /// Address from `QFW_ADDR`, else the default.
    pub fn env_addr() -> String {
        std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string())
    }

    pub fn from_env() -> Result<Self, ClientError> {
        Client::connect(Client::env_addr())
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), ClientError> {
        self.writer.set_read_timeout(timeout)?;
        Ok(())
    }

    /// Send one request and wait for its response.
    pub fn call(&mut self, method: &str, params: Value) -> Result<Value, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode_request(&WireRequest {
            id: json!(id),
            method: method.to_string(),
            params,
        });
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(ClientError::Protocol("server closed the connection".into()));
        }
        let resp = decode_response(buf.trim_end()).map_err(|e| ClientError::Protocol(e.to_string()))?;
        if let Some(err) = resp.error {
            return Err(ClientError::Server {
                code: err.code,
                message: err.message,
            });
        }
        if resp.id != json!(id) {
            return Err(ClientError::Protocol(format!(
                "response id {} does not match request {id}",
                resp.id
            )));
        }
        resp.result
            .ok_or_else(|| ClientError::Protocol("success response without result".into()))
    }

    fn call_as<T: DeserializeOwned>(&mut self, method: &str, params: Value) -> Result<T, ClientError> {
        let v = self.call(method, params)?;
        serde_json::from_value(v).map_err(|e| ClientError::Protocol(format!("unexpected {method} result: {e}")))
    }

    pub fn create_circuit(&mut self, info: &TaskInfo) -> Result<Cid, ClientError> {
        let v = self.call("create_circuit", serde_json::to_value(info).expect("serializable"))?;
        serde_json::from_value(v["cid"].clone()).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn sync_run(&mut self, cid: &Cid) -> Result<SyncRunOutput, ClientError> {
        self.call_as("sync_run", json!({ "cid": cid }))
    }

    pub fn async_run(&mut self, cid: &Cid) -> Result<TaskState, ClientError> {
        let v = self.call("async_run", json!({ "cid": cid }))?;
        serde_json::from_value(v["state"].clone()).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn get_result(&mut self, cid: &Cid) -> Result<CircuitHandle, ClientError> {
        self.call_as("get_result", json!({ "cid": cid }))
    }

    pub fn run_ensemble(&mut self, cids: &[Cid], repetitions: usize) -> Result<ExecutionResult, ClientError> {
        self.call_as("run_ensemble", json!({ "cids": cids, "repetitions": repetitions }))
    }

    pub fn list_backends(&mut self) -> Result<Vec<BackendDescriptor>, ClientError> {
        self.call_as("list_backends", json!({}))
    }

    pub fn utilization(&mut self) -> Result<Value, ClientError> {
        self.call("utilization", json!({}))
    }

    pub fn server_stats(&mut self) -> Result<ServerStats, ClientError> {
        self.call_as("server_stats", json!({}))
    }
}
