//! Quantum platform manager: the circuit-execution API.
//!
//! A circuit is registered with [`Qpm::create_circuit`], which parses and
//! checks it and binds it to a backend. Running it sizes a simulator
//! instance with the sizing function (one process per started block of ten
//! qubits by default), queues the instance on the task manager, and executes
//! it on the chosen backend with one worker per placed process.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendDescriptor, BackendError, BackendRegistry, RegistryError, RunOptions};
use crate::qasm::{self, Circuit, ParseError};
use crate::qtm::{Completion, Job, QtmError, Runnable, SchedulerMode, SessionId, TaskManager, DEFAULT_SESSION};
use crate::resource::{NodeSpec, Placement, ResourceError, Utilization};
use crate::sim::ExecutionResult;

/// Qubits covered by one simulator process.
pub const QUBITS_PER_PROCESS: usize = 10;

/// Process count for a circuit of `num_qubits` qubits: one per started block
/// of ten.
pub fn procs_for_circuit(num_qubits: usize) -> usize {
    num_qubits.div_ceil(QUBITS_PER_PROCESS).max(1)
}

/// Maps a circuit to the number of simulator processes it should get.
pub type SizingFn = Arc<dyn Fn(&Circuit) -> usize + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cid(pub String);

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Cid {
    fn from(s: &str) -> Self {
        Cid(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub qasm: String,
    pub num_qubits: usize,
    pub num_shots: u64,
    /// Opaque label carried through unchanged.
    #[serde(default)]
    pub compiler: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TaskInfo {
    pub fn new(qasm: impl Into<String>, num_qubits: usize, num_shots: u64) -> Self {
        TaskInfo {
            qasm: qasm.into(),
            num_qubits,
            num_shots,
            compiler: "staq".into(),
            backend: None,
            seed: None,
        }
    }

    pub fn with_backend(mut self, backend: impl Into<String>) -> Self {
        self.backend = Some(backend.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Created,
    Queued,
    Running,
    Done,
    Failed,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }

    /// Forward-only lifecycle; a task may also fail straight from `created`
    /// or `queued` when it cannot be dispatched.
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Created, Queued)
                | (Queued, Running)
                | (Running, Done)
                | (Running, Failed)
                | (Created, Failed)
                | (Queued, Failed)
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskState::Created => "created",
            TaskState::Queued => "queued",
            TaskState::Running => "running",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
        })
    }
}

/// Per-run statistics reported alongside the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_time_seconds: f64,
    pub queue_seconds: f64,
    pub backend: String,
    pub workers: usize,
    pub procs: usize,
    pub placement: String,
    pub num_qubits: usize,
    pub shots: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitHandle {
    pub cid: Cid,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ExecutionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `sync_run` outcome: `rc` 0 on success, 1 on backend failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRunOutput {
    pub rc: i32,
    pub result: Option<ExecutionResult>,
    pub stats: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const RC_OK: i32 = 0;
pub const RC_BACKEND_FAILURE: i32 = 1;
pub const RC_INVALID_REQUEST: i32 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpmError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("task declares {declared} qubits but the program uses {parsed}")]
    QubitMismatch { declared: usize, parsed: usize },
    #[error("num_shots must be at least 1")]
    NoShots,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("circuit needs {requested} qubits but backend '{backend}' allows at most {max}")]
    QubitBudget {
        backend: String,
        requested: usize,
        max: usize,
    },
    #[error("unknown circuit '{0}'")]
    UnknownCid(Cid),
    #[error("circuit '{cid}' is {state}; expected {expected}")]
    InvalidState {
        cid: Cid,
        state: TaskState,
        expected: TaskState,
    },
    #[error(transparent)]
    Scheduler(#[from] QtmError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

impl QpmError {
    /// Return code a synchronous caller would see for this error.
    pub fn rc(&self) -> i32 {
        match self {
            QpmError::Backend(_) => RC_BACKEND_FAILURE,
            _ => RC_INVALID_REQUEST,
        }
    }
}

impl From<ResourceError> for QpmError {
    fn from(e: ResourceError) -> Self {
        QpmError::Scheduler(QtmError::Resource(e))
    }
}

struct TaskRecord {
    info: TaskInfo,
    circuit: Arc<Circuit>,
    backend: Arc<dyn Backend>,
    session: SessionId,
    state: TaskState,
    result: Option<ExecutionResult>,
    stats: Option<RunStats>,
    error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpmCounters {
    pub created: u64,
    pub done: u64,
    pub failed: u64,
}

pub(crate) struct Shared {
    registry: BackendRegistry,
    scheduler: Arc<TaskManager>,
    tasks: Mutex<HashMap<Cid, TaskRecord>>,
    changed: Condvar,
    next_cid: AtomicU64,
    sizing: RwLock<SizingFn>,
    counters: Mutex<QpmCounters>,
}

/// Cheaply cloneable handle to one platform manager.
#[derive(Clone)]
pub struct Qpm {
    shared: Arc<Shared>,
}

impl fmt::Debug for Qpm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Qpm")
            .field("backends", &self.shared.registry)
            .field("scheduler", &self.shared.scheduler)
            .finish()
    }
}

/// What a dispatched run reports back.
pub(crate) struct RunOutcome {
    pub result: Result<ExecutionResult, String>,
    pub stats: RunStats,
}

/// One execution of a registered circuit. Standalone runs write their outcome
/// to the handle; ensemble members hand it to `sink` instead.
struct RunTask {
    shared: Arc<Shared>,
    cid: Cid,
    circuit: Arc<Circuit>,
    backend: Arc<dyn Backend>,
    shots: u64,
    seed: u64,
    submitted: Instant,
    sink: Option<Box<dyn FnOnce(RunOutcome) + Send>>,
}

impl Runnable for RunTask {
    fn run(self: Box<Self>, placement: &Placement) -> Completion {
        let queue_seconds = self.submitted.elapsed().as_secs_f64();
        self.shared.transition(&self.cid, TaskState::Running, |_| {});
        let started = Instant::now();
        let workers = placement.procs();
        let result = self
            .backend
            .run(
                &self.circuit,
                self.shots,
                RunOptions {
                    workers,
                    seed: self.seed,
                },
            )
            .map_err(|e| match e {
                BackendError::Failed(m) => m,
                other => other.to_string(),
            });
        let stats = RunStats {
            wall_time_seconds: started.elapsed().as_secs_f64(),
            queue_seconds,
            backend: self.backend.name().to_string(),
            workers,
            procs: placement.procs(),
            placement: placement.summary(),
            num_qubits: self.circuit.num_qubits,
            shots: self.shots,
            seed: self.seed,
        };
        let outcome = RunOutcome { result, stats };
        let RunTask { shared, cid, sink, .. } = *self;
        Box::new(move || match sink {
            Some(sink) => sink(outcome),
            None => shared.complete(&cid, outcome),
        })
    }

    fn cancel(self: Box<Self>, reason: &str) {
        let outcome_error = format!("cancelled: {reason}");
        match self.sink {
            Some(sink) => sink(RunOutcome {
                result: Err(outcome_error),
                stats: RunStats {
                    wall_time_seconds: 0.0,
                    queue_seconds: self.submitted.elapsed().as_secs_f64(),
                    backend: self.backend.name().to_string(),
                    workers: 0,
                    procs: 0,
                    placement: String::new(),
                    num_qubits: self.circuit.num_qubits,
                    shots: self.shots,
                    seed: self.seed,
                },
            }),
            None => self.shared.fail(&self.cid, outcome_error),
        }
    }
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, HashMap<Cid, TaskRecord>> {
        self.tasks.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Move a task forward if the lifecycle allows it; returns whether it moved.
    fn transition(&self, cid: &Cid, next: TaskState, update: impl FnOnce(&mut TaskRecord)) -> bool {
        let mut tasks = self.lock();
        let Some(rec) = tasks.get_mut(cid) else {
            return false;
        };
        if !rec.state.can_become(next) {
            return false;
        }
        rec.state = next;
        update(rec);
        drop(tasks);
        if next.is_terminal() {
            let mut c = self.counters.lock().unwrap_or_else(|e| e.into_inner());
            if next == TaskState::Done {
                c.done += 1;
            } else {
                c.failed += 1;
            }
        }
        self.changed.notify_all();
        true
    }

    fn complete(&self, cid: &Cid, outcome: RunOutcome) {
        match outcome.result {
            Ok(result) => {
                self.transition(cid, TaskState::Done, |rec| {
                    rec.result = Some(result);
                    rec.stats = Some(outcome.stats);
                });
            }
            Err(msg) => {
                self.transition(cid, TaskState::Failed, |rec| {
                    rec.error = Some(msg);
                    rec.stats = Some(outcome.stats);
                });
            }
        }
    }

    pub(crate) fn fail(&self, cid: &Cid, msg: String) {
        self.transition(cid, TaskState::Failed, |rec| rec.error = Some(msg));
    }

    pub(crate) fn finish_ensemble_member(&self, cid: &Cid, result: ExecutionResult, stats: RunStats) {
        self.transition(cid, TaskState::Done, |rec| {
            rec.result = Some(result);
            rec.stats = Some(stats);
        });
    }
}

impl Qpm {
    /// Platform manager over `nodes` with the default backend registry.
    pub fn new(nodes: Vec<NodeSpec>, mode: SchedulerMode) -> Result<Self, QpmError> {
        Qpm::with_registry(nodes, mode, BackendRegistry::with_defaults())
    }

    pub fn with_registry(
        nodes: Vec<NodeSpec>,
        mode: SchedulerMode,
        registry: BackendRegistry,
    ) -> Result<Self, QpmError> {
        let scheduler = TaskManager::new(nodes, mode)?;
        Ok(Qpm {
            shared: Arc::new(Shared {
                registry,
                scheduler,
                tasks: Mutex::new(HashMap::new()),
                changed: Condvar::new(),
                next_cid: AtomicU64::new(1),
                sizing: RwLock::new(Arc::new(|c: &Circuit| procs_for_circuit(c.num_qubits))),
                counters: Mutex::new(QpmCounters::default()),
            }),
        })
    }

    /// Replace the instance-sizing heuristic.
    pub fn set_sizing(&self, sizing: SizingFn) {
        *self.shared.sizing.write().unwrap_or_else(|e| e.into_inner()) = sizing;
    }

    pub fn procs_for(&self, circuit: &Circuit) -> usize {
        let f = self.shared.sizing.read().unwrap_or_else(|e| e.into_inner()).clone();
        f(circuit).max(1)
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.shared.registry
    }

    pub fn scheduler(&self) -> &Arc<TaskManager> {
        &self.shared.scheduler
    }

    pub fn list_backends(&self) -> Vec<BackendDescriptor> {
        self.shared.registry.list()
    }

    pub fn register_backend(&self, backend: Arc<dyn Backend>, make_default: bool) -> Result<(), QpmError> {
        Ok(self.shared.registry.register(backend, make_default)?)
    }

    pub fn utilization(&self) -> Utilization {
        self.shared.scheduler.utilization()
    }

    pub fn set_mode(&self, mode: SchedulerMode) -> Result<(), QpmError> {
        Ok(self.shared.scheduler.set_mode(mode)?)
    }

    pub fn counters(&self) -> QpmCounters {
        self.shared.counters.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn create_circuit(&self, info: TaskInfo) -> Result<Cid, QpmError> {
        self.create_circuit_in(DEFAULT_SESSION, info)
    }

    /// Register a circuit owned by `session`.
    pub fn create_circuit_in(&self, session: SessionId, info: TaskInfo) -> Result<Cid, QpmError> {
        if info.num_shots == 0 {
            return Err(QpmError::NoShots);
        }
        let circuit = qasm::parse(&info.qasm)?;
        if circuit.num_qubits != info.num_qubits {
            return Err(QpmError::QubitMismatch {
                declared: info.num_qubits,
                parsed: circuit.num_qubits,
            });
        }
        let backend = self.shared.registry.select(info.backend.as_deref())?;
        if circuit.num_qubits > backend.max_qubits() {
            return Err(QpmError::QubitBudget {
                backend: backend.name().to_string(),
                requested: circuit.num_qubits,
                max: backend.max_qubits(),
            });
        }
        let cid = Cid(format!("c{}", self.shared.next_cid.fetch_add(1, Ordering::Relaxed)));
        self.shared.lock().insert(
            cid.clone(),
            TaskRecord {
                info,
                circuit: Arc::new(circuit),
                backend,
                session,
                state: TaskState::Created,
                result: None,
                stats: None,
                error: None,
            },
        );
        self.shared.counters.lock().unwrap_or_else(|e| e.into_inner()).created += 1;
        Ok(cid)
    }

    /// Parsed circuit registered under `cid`.
    pub fn circuit(&self, cid: &Cid) -> Result<Arc<Circuit>, QpmError> {
        self.shared
            .lock()
            .get(cid)
            .map(|r| r.circuit.clone())
            .ok_or_else(|| QpmError::UnknownCid(cid.clone()))
    }

    /// Move `cid` from created to queued and build its job. `sink` diverts
    /// the outcome away from the handle (used by ensembles).
    fn take_for_run(
        &self,
        cid: &Cid,
        seed: Option<u64>,
        sink: Option<Box<dyn FnOnce(RunOutcome) + Send>>,
        require_created: bool,
    ) -> Result<Job, QpmError> {
        let mut tasks = self.shared.lock();
        let rec = tasks.get_mut(cid).ok_or_else(|| QpmError::UnknownCid(cid.clone()))?;
        if require_created {
            if rec.state != TaskState::Created {
                return Err(QpmError::InvalidState {
                    cid: cid.clone(),
                    state: rec.state,
                    expected: TaskState::Created,
                });
            }
            rec.state = TaskState::Queued;
        }
        let seed = seed.or(rec.info.seed).unwrap_or_else(rand::random);
        let circuit = rec.circuit.clone();
        let job = Job {
            label: cid.0.clone(),
            session: rec.session,
            procs: 0,
            task: Box::new(RunTask {
                shared: self.shared.clone(),
                cid: cid.clone(),
                circuit: circuit.clone(),
                backend: rec.backend.clone(),
                shots: rec.info.num_shots,
                seed,
                submitted: Instant::now(),
                sink,
            }),
        };
        drop(tasks);
        Ok(Job {
            procs: self.procs_for(&circuit),
            ..job
        })
    }

    fn submit(&self, cid: &Cid, job: Job) -> Result<(), QpmError> {
        if let Err(e) = self.shared.scheduler.submit(job) {
            self.shared.fail(cid, e.to_string());
            return Err(e.into());
        }
        Ok(())
    }

    /// Queue `cid` and return immediately.
    pub fn async_run(&self, cid: &Cid) -> Result<TaskState, QpmError> {
        let job = self.take_for_run(cid, None, None, true)?;
        self.submit(cid, job)?;
        Ok(self.get_result(cid)?.state)
    }

    /// Queue `cid` and block until it finishes.
    pub fn sync_run(&self, cid: &Cid) -> Result<SyncRunOutput, QpmError> {
        self.async_run(cid)?;
        let handle = self.wait(cid, None)?;
        Ok(match handle.state {
            TaskState::Done => SyncRunOutput {
                rc: RC_OK,
                result: handle.result,
                stats: handle.stats,
                error: None,
            },
            _ => SyncRunOutput {
                rc: RC_BACKEND_FAILURE,
                result: None,
                stats: handle.stats,
                error: handle.error,
            },
        })
    }

    /// Non-blocking snapshot of a handle.
    pub fn get_result(&self, cid: &Cid) -> Result<CircuitHandle, QpmError> {
        let tasks = self.shared.lock();
        let rec = tasks.get(cid).ok_or_else(|| QpmError::UnknownCid(cid.clone()))?;
        Ok(CircuitHandle {
            cid: cid.clone(),
            state: rec.state,
            result: rec.result.clone(),
            stats: rec.stats.clone(),
            error: rec.error.clone(),
        })
    }

    /// Block until `cid` is terminal or `timeout` passes, returning the
    /// latest snapshot either way.
    pub fn wait(&self, cid: &Cid, timeout: Option<Duration>) -> Result<CircuitHandle, QpmError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut tasks = self.shared.lock();
        loop {
            let rec = tasks.get(cid).ok_or_else(|| QpmError::UnknownCid(cid.clone()))?;
            let timed_out = deadline.is_some_and(|d| Instant::now() >= d);
            if rec.state.is_terminal() || timed_out {
                return Ok(CircuitHandle {
                    cid: cid.clone(),
                    state: rec.state,
                    result: rec.result.clone(),
                    stats: rec.stats.clone(),
                    error: rec.error.clone(),
                });
            }
            tasks = match deadline {
                Some(d) => {
                    self.shared
                        .changed
                        .wait_timeout(tasks, d.saturating_duration_since(Instant::now()))
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
                None => self.shared.changed.wait(tasks).unwrap_or_else(|e| e.into_inner()),
            };
        }
    }

    // Ensemble support (see `qtm::run_ensemble`).

    pub(crate) fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Mark every cid queued, or fail without changing any of them.
    pub(crate) fn claim_all(&self, cids: &[Cid]) -> Result<Vec<Arc<Circuit>>, QpmError> {
        let mut tasks = self.shared.lock();
        let mut circuits = Vec::with_capacity(cids.len());
        for (i, cid) in cids.iter().enumerate() {
            if cids[..i].contains(cid) {
                return Err(QpmError::Invalid(format!("circuit '{cid}' listed twice")));
            }
            let rec = tasks.get(cid).ok_or_else(|| QpmError::UnknownCid(cid.clone()))?;
            if rec.state != TaskState::Created {
                return Err(QpmError::InvalidState {
                    cid: cid.clone(),
                    state: rec.state,
                    expected: TaskState::Created,
                });
            }
            circuits.push(rec.circuit.clone());
        }
        for cid in cids {
            tasks.get_mut(cid).expect("checked above").state = TaskState::Queued;
        }
        Ok(circuits)
    }

    pub(crate) fn base_seed(&self, cid: &Cid) -> Option<u64> {
        self.shared.lock().get(cid).and_then(|r| r.info.seed)
    }

    pub(crate) fn member_job(
        &self,
        cid: &Cid,
        seed: u64,
        sink: Box<dyn FnOnce(RunOutcome) + Send>,
    ) -> Result<Job, QpmError> {
        self.take_for_run(cid, Some(seed), Some(sink), false)
    }
}
