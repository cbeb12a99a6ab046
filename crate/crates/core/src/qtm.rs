//! Quantum task manager: FIFO task queues driven against the node pool.
//!
//! A scheduling step walks each queue from the head, placing jobs until the
//! first one that does not fit. Steps run on enqueue and whenever a running
//! job releases its placement; each step holds the scheduler lock for its
//! whole duration, so it is atomic with respect to the pool.
//!
//! In many-job mode every session shares one queue over the whole pool. In
//! per-job mode the pool is split into partitions and a session is bound to
//! a free partition the first time it submits work.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{mpsc, Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::qasm::Circuit;
use crate::qpm::{Cid, Qpm, QpmError, RunOutcome, RunStats};
use crate::resource::{partition_pool, NodeSpec, NodeUsage, Placement, PoolState, ResourceError, Utilization};
use crate::sim::ExecutionResult;

pub type SessionId = u64;

/// Session used by in-process callers that never open one.
pub const DEFAULT_SESSION: SessionId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SchedulerMode {
    ManyJob,
    PerJob { partition: f64 },
}

impl SchedulerMode {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerMode::ManyJob => "many_job",
            SchedulerMode::PerJob { .. } => "per_job",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QtmError {
    #[error(transparent)]
    Resource(#[from] ResourceError),
    #[error("cannot change mode while {0} task(s) are queued or running")]
    Busy(usize),
    #[error("no free pool partition for session {0}")]
    NoPartition(SessionId),
    #[error("scheduler is shutting down")]
    ShuttingDown,
}

/// Called once with the job's placement; the returned closure runs after the
/// placement has been released.
pub type Completion = Box<dyn FnOnce() + Send>;

pub trait Runnable: Send {
    fn run(self: Box<Self>, placement: &Placement) -> Completion;
    /// The job was dropped from the queue without running.
    fn cancel(self: Box<Self>, reason: &str);
}

pub struct Job {
    pub label: String,
    pub session: SessionId,
    pub procs: usize,
    pub task: Box<dyn Runnable>,
}

impl std::fmt::Debug for Job {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Job")
            .field("label", &self.label)
            .field("session", &self.session)
            .field("procs", &self.procs)
            .finish()
    }
}

struct Partition {
    pool: PoolState,
    queue: VecDeque<Job>,
    running: usize,
    owner: Option<SessionId>,
}

impl Partition {
    fn new(nodes: Vec<NodeSpec>) -> Result<Self, ResourceError> {
        Ok(Partition {
            pool: PoolState::new(nodes)?,
            queue: VecDeque::new(),
            running: 0,
            owner: None,
        })
    }

    fn active(&self) -> usize {
        self.queue.len() + self.running
    }
}

struct Inner {
    mode: SchedulerMode,
    nodes: Vec<NodeSpec>,
    partitions: Vec<Partition>,
    bindings: HashMap<SessionId, usize>,
    closing: Vec<SessionId>,
    next_session: SessionId,
    dispatch_log: Vec<String>,
    shutting_down: bool,
}

impl Inner {
    fn active(&self) -> usize {
        self.partitions.iter().map(Partition::active).sum()
    }

    fn partition_for(&mut self, session: SessionId) -> Result<usize, QtmError> {
        if let SchedulerMode::ManyJob = self.mode {
            return Ok(0);
        }
        if let Some(&p) = self.bindings.get(&session) {
            return Ok(p);
        }
        let free = self
            .partitions
            .iter()
            .position(|p| p.owner.is_none())
            .ok_or(QtmError::NoPartition(session))?;
        self.partitions[free].owner = Some(session);
        self.bindings.insert(session, free);
        Ok(free)
    }

    fn release_closed(&mut self) {
        let mut still = Vec::new();
        for session in std::mem::take(&mut self.closing) {
            match self.bindings.get(&session) {
                Some(&p) if self.partitions[p].active() > 0 => still.push(session),
                Some(&p) => {
                    self.partitions[p].owner = None;
                    self.bindings.remove(&session);
                }
                None => {}
            }
        }
        self.closing = still;
    }

    /// Dispatch queue heads that fit; stop each queue at its first block.
    fn step(&mut self) -> Vec<(Job, Placement, usize)> {
        let mut out = Vec::new();
        for (idx, part) in self.partitions.iter_mut().enumerate() {
            while let Some(head) = part.queue.front() {
                match part.pool.try_place(head.procs) {
                    Ok(Some(placement)) => {
                        let job = part.queue.pop_front().expect("front exists");
                        part.running += 1;
                        self.dispatch_log.push(job.label.clone());
                        out.push((job, placement, idx));
                    }
                    _ => break,
                }
            }
        }
        out
    }
}

pub struct TaskManager {
    inner: Mutex<Inner>,
    idle: Condvar,
}

impl std::fmt::Debug for TaskManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskManager").field("mode", &self.mode()).finish()
    }
}

fn build_partitions(nodes: &[NodeSpec], mode: SchedulerMode) -> Result<Vec<Partition>, ResourceError> {
    match mode {
        SchedulerMode::ManyJob => Ok(vec![Partition::new(nodes.to_vec())?]),
        SchedulerMode::PerJob { partition } => partition_pool(nodes, partition)?
            .into_iter()
            .map(Partition::new)
            .collect(),
    }
}

impl TaskManager {
    pub fn new(nodes: Vec<NodeSpec>, mode: SchedulerMode) -> Result<Arc<Self>, ResourceError> {
        PoolState::new(nodes.clone())?;
        let partitions = build_partitions(&nodes, mode)?;
        Ok(Arc::new(TaskManager {
            inner: Mutex::new(Inner {
                mode,
                nodes,
                partitions,
                bindings: HashMap::new(),
                closing: Vec::new(),
                next_session: DEFAULT_SESSION + 1,
                dispatch_log: Vec::new(),
                shutting_down: false,
            }),
            idle: Condvar::new(),
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn mode(&self) -> SchedulerMode {
        self.lock().mode
    }

    pub fn nodes(&self) -> Vec<NodeSpec> {
        self.lock().nodes.clone()
    }

    pub fn open_session(&self) -> SessionId {
        let mut inner = self.lock();
        let id = inner.next_session;
        inner.next_session += 1;
        id
    }

    /// Unbind the session's partition once its work has drained.
    pub fn close_session(&self, session: SessionId) {
        let mut inner = self.lock();
        inner.closing.push(session);
        inner.release_closed();
    }

    /// Bind `session` to its partition (per-job mode) and report that
    /// partition's utilization. In many-job mode this is the whole pool.
    pub fn session_utilization(&self, session: SessionId) -> Result<Utilization, QtmError> {
        let mut inner = self.lock();
        let p = inner.partition_for(session)?;
        let part = &inner.partitions[p];
        let mut u = part.pool.utilization();
        u.queue = part.queue.len();
        Ok(u)
    }

    /// Largest request a session can ever have satisfied.
    pub fn session_capacity(&self, session: SessionId) -> Result<usize, QtmError> {
        let mut inner = self.lock();
        let p = inner.partition_for(session)?;
        Ok(inner.partitions[p].pool.capacity())
    }

    /// Switch operating mode. Only allowed while nothing is queued or running.
    pub fn set_mode(&self, mode: SchedulerMode) -> Result<(), QtmError> {
        let mut inner = self.lock();
        let active = inner.active();
        if active > 0 {
            return Err(QtmError::Busy(active));
        }
        inner.partitions = build_partitions(&inner.nodes, mode)?;
        inner.mode = mode;
        inner.bindings.clear();
        inner.closing.clear();
        Ok(())
    }

    /// Queue a job and run a scheduling step. Returns the job's queue
    /// position at enqueue time (before the step).
    pub fn submit(self: &Arc<Self>, job: Job) -> Result<usize, QtmError> {
        let launches = {
            let mut inner = self.lock();
            if inner.shutting_down {
                return Err(QtmError::ShuttingDown);
            }
            let p = inner.partition_for(job.session)?;
            let capacity = inner.partitions[p].pool.capacity();
            if job.procs == 0 {
                return Err(ResourceError::ZeroProcs.into());
            }
            if job.procs > capacity {
                return Err(ResourceError::ExceedsCapacity {
                    requested: job.procs,
                    capacity,
                }
                .into());
            }
            let position = inner.partitions[p].queue.len();
            inner.partitions[p].queue.push_back(job);
            (position, inner.step())
        };
        let (position, launches) = launches;
        self.launch(launches);
        Ok(position)
    }

    /// Run one scheduling step and return the labels of dispatched jobs.
    pub fn schedule_loop_step(self: &Arc<Self>) -> Vec<String> {
        let launches = self.lock().step();
        let labels = launches.iter().map(|(j, _, _)| j.label.clone()).collect();
        self.launch(launches);
        labels
    }

    fn launch(self: &Arc<Self>, launches: Vec<(Job, Placement, usize)>) {
        for (job, placement, part) in launches {
            let mgr = Arc::clone(self);
            log::debug!("dispatch {} on {}", job.label, placement.summary());
            std::thread::spawn(move || {
                let done = job.task.run(&placement);
                mgr.finish(part, &placement);
                done();
            });
        }
    }

    fn finish(self: &Arc<Self>, part: usize, placement: &Placement) {
        let launches = {
            let mut inner = self.lock();
            let p = &mut inner.partitions[part];
            p.pool
                .release(placement.instance_id)
                .expect("running job holds an active placement");
            p.running -= 1;
            let launches = inner.step();
            inner.release_closed();
            if inner.active() == 0 {
                self.idle.notify_all();
            }
            launches
        };
        self.launch(launches);
    }

    /// Whole-pool view: per-node allocation summed over partitions and the
    /// total number of queued jobs.
    pub fn utilization(&self) -> Utilization {
        let inner = self.lock();
        let mut allocated: BTreeMap<String, usize> = BTreeMap::new();
        let mut queue = 0;
        for part in &inner.partitions {
            for n in part.pool.utilization().nodes {
                *allocated.entry(n.node_id).or_insert(0) += n.allocated;
            }
            queue += part.queue.len();
        }
        Utilization {
            nodes: inner
                .nodes
                .iter()
                .map(|n| NodeUsage {
                    node_id: n.node_id.clone(),
                    allocated: allocated.get(n.node_id.as_str()).copied().unwrap_or(0),
                    capacity: n.slots,
                })
                .collect(),
            queue,
        }
    }

    /// Number of queued plus running jobs.
    pub fn active(&self) -> usize {
        self.lock().active()
    }

    pub fn running(&self) -> usize {
        self.lock().partitions.iter().map(|p| p.running).sum()
    }

    /// Labels of all jobs dispatched so far, in dispatch order.
    pub fn dispatch_log(&self) -> Vec<String> {
        self.lock().dispatch_log.clone()
    }

    /// Block until nothing is queued or running, or `timeout` passes.
    /// Returns whether the scheduler is idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        while inner.active() > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            inner = self
                .idle
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        true
    }

    /// Refuse new work and drop every queued job, returning how many were
    /// cancelled. Running jobs are unaffected.
    pub fn shutdown(&self, reason: &str) -> usize {
        let dropped: Vec<Job> = {
            let mut inner = self.lock();
            inner.shutting_down = true;
            let dropped = inner
                .partitions
                .iter_mut()
                .flat_map(|p| p.queue.drain(..).collect::<Vec<_>>())
                .collect();
            if inner.active() == 0 {
                self.idle.notify_all();
            }
            dropped
        };
        let n = dropped.len();
        for job in dropped {
            job.task.cancel(reason);
        }
        n
    }

    /// Check capacity/conservation for every partition.
    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.lock();
        for part in &inner.partitions {
            part.pool.check_invariants()?;
        }
        Ok(())
    }
}

/// Circuits to run repeatedly with merged histograms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub cids: Vec<Cid>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Qpm(#[from] QpmError),
    #[error("ensemble needs at least one circuit and one repetition")]
    Empty,
    #[error("circuit '{cid}' has {found} clbits but the ensemble uses {expected}")]
    WidthMismatch { cid: Cid, expected: usize, found: usize },
    #[error("ensemble member '{cid}' failed: {message}")]
    MemberFailed {
        cid: Cid,
        message: String,
        /// Merged counts of the members that finished before the failure.
        partial: Option<Box<ExecutionResult>>,
    },
}

/// Seed for repetition `rep`; repetition 0 keeps the base seed so a
/// one-repetition ensemble reproduces a plain run.
fn repetition_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Run every circuit in `spec` `repetitions` times and add the histograms.
/// Members are scheduled like any other job, so they may run concurrently
/// and interleave with other sessions' work. The first member failure aborts
/// the ensemble; counts merged up to that point are attached to the error.
pub fn run_ensemble(qpm: &Qpm, spec: &EnsembleSpec) -> Result<ExecutionResult, EnsembleError> {
    if spec.cids.is_empty() || spec.repetitions == 0 {
        return Err(EnsembleError::Empty);
    }
    let started = Instant::now();
    let width = qpm.circuit(&spec.cids[0])?.num_clbits;
    for cid in &spec.cids[1..] {
        let found = qpm.circuit(cid)?.num_clbits;
        if found != width {
            return Err(EnsembleError::WidthMismatch {
                cid: cid.clone(),
                expected: width,
                found,
            });
        }
    }
    let circuits = qpm.claim_all(&spec.cids)?;

    let (tx, rx) = mpsc::channel::<(usize, RunOutcome)>();
    let total = spec.cids.len() * spec.repetitions;
    for (i, cid) in spec.cids.iter().enumerate() {
        let base = qpm.base_seed(cid).unwrap_or_else(rand::random);
        for rep in 0..spec.repetitions {
            let tx = tx.clone();
            let job = qpm.member_job(
                cid,
                repetition_seed(base, rep),
                Box::new(move |outcome| {
                    let _ = tx.send((i, outcome));
                }),
            )?;
            if let Err(e) = qpm.scheduler().submit(job) {
                let msg = e.to_string();
                for c in &spec.cids {
                    qpm.shared().fail(c, format!("ensemble aborted: {msg}"));
                }
                return Err(QpmError::from(e).into());
            }
        }
    }
    drop(tx);

    let mut per_cid: Vec<Option<ExecutionResult>> = vec![None; spec.cids.len()];
    let mut remaining = vec![spec.repetitions; spec.cids.len()];
    let mut last_stats: Vec<Option<RunStats>> = vec![None; spec.cids.len()];
    for _ in 0..total {
        let (i, outcome) = rx.recv().expect("every submitted member reports back");
        match outcome.result {
            Ok(result) => {
                match &mut per_cid[i] {
                    Some(acc) => acc.merge_counts(&result),
                    slot => *slot = Some(result),
                }
                last_stats[i] = Some(outcome.stats);
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    qpm.shared().finish_ensemble_member(
                        &spec.cids[i],
                        per_cid[i].clone().expect("at least one repetition"),
                        last_stats[i].clone().expect("at least one repetition"),
                    );
                }
            }
            Err(message) => {
                let cid = spec.cids[i].clone();
                qpm.shared().fail(&cid, message.clone());
                for c in &spec.cids {
                    qpm.shared().fail(c, format!("ensemble aborted after '{cid}' failed"));
                }
                let partial = merge_all(per_cid.into_iter().flatten(), &circuits, started).map(Box::new);
                return Err(EnsembleError::MemberFailed { cid, message, partial });
            }
        }
    }
    Ok(merge_all(per_cid.into_iter().flatten(), &circuits, started).expect("all members finished"))
}

fn merge_all(
    parts: impl Iterator<Item = ExecutionResult>,
    circuits: &[Arc<Circuit>],
    started: Instant,
) -> Option<ExecutionResult> {
    let mut merged: Option<ExecutionResult> = None;
    for part in parts {
        match &mut merged {
            Some(m) => {
                m.merge_counts(&part);
                m.stats.workers = m.stats.workers.max(part.stats.workers);
                if m.stats.backend != part.stats.backend {
                    m.stats.backend = "mixed".into();
                }
            }
            None => merged = Some(part),
        }
    }
    if let Some(m) = &mut merged {
        m.stats.wall_time_seconds = started.elapsed().as_secs_f64();
        m.stats.num_qubits = circuits.iter().map(|c| c.num_qubits).max().unwrap_or(0);
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Runs until told to stop; reports start and completion.
    struct Probe {
        label: String,
        started: mpsc::Sender<(String, Placement)>,
        gate: Arc<(Mutex<bool>, Condvar)>,
        done: mpsc::Sender<String>,
    }

    impl Runnable for Probe {
        fn run(self: Box<Self>, placement: &Placement) -> Completion {
            let _ = self.started.send((self.label.clone(), placement.clone()));
            let (lock, cv) = &*self.gate;
            let mut open = lock.lock().unwrap();
            while !*open {
                open = cv.wait(open).unwrap();
            }
            let done = self.done.clone();
            let label = self.label.clone();
            Box::new(move || {
                let _ = done.send(label);
            })
        }

        fn cancel(self: Box<Self>, _reason: &str) {
            let _ = self.done.send(format!("cancelled:{}", self.label));
        }
    }

    struct Harness {
        mgr: Arc<TaskManager>,
        gate: Arc<(Mutex<bool>, Condvar)>,
        started_tx: mpsc::Sender<(String, Placement)>,
        started: mpsc::Receiver<(String, Placement)>,
        done_tx: mpsc::Sender<String>,
        done: mpsc::Receiver<String>,
    }

    impl Harness {
        fn new(mode: SchedulerMode) -> Self {
            let (started_tx, started) = mpsc::channel();
            let (done_tx, done) = mpsc::channel();
            Harness {
                mgr: TaskManager::new(NodeSpec::homogeneous(2, 8), mode).unwrap(),
                gate: Arc::new((Mutex::new(false), Condvar::new())),
                started_tx,
                started,
                done_tx,
                done,
            }
        }

        fn job(&self, label: &str, session: SessionId, procs: usize) -> Job {
            Job {
                label: label.into(),
                session,
                procs,
                task: Box::new(Probe {
                    label: label.into(),
                    started: self.started_tx.clone(),
                    gate: self.gate.clone(),
                    done: self.done_tx.clone(),
                }),
            }
        }

        fn open_gate(&self) {
            *self.gate.0.lock().unwrap() = true;
            self.gate.1.notify_all();
        }

        fn started(&self, n: usize) -> Vec<(String, Placement)> {
            (0..n)
                .map(|_| self.started.recv_timeout(Duration::from_secs(5)).unwrap())
                .collect()
        }
    }

    #[test]
    fn four_eight_four_dispatch_then_block() {
        let h = Harness::new(SchedulerMode::ManyJob);
        h.mgr.submit(h.job("a", 0, 4)).unwrap();
        h.mgr.submit(h.job("b", 0, 8)).unwrap();
        h.mgr.submit(h.job("c", 0, 4)).unwrap();
        let mut got = h.started(3);
        got.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(got[0].1.summary(), "node1:4");
        assert_eq!(got[1].1.summary(), "node1:4,node2:4");
        assert_eq!(got[2].1.summary(), "node2:4");
        assert_eq!(h.mgr.submit(h.job("d", 0, 4)).unwrap(), 0);
        assert_eq!(h.mgr.utilization().queue, 1);
        assert!(h.mgr.schedule_loop_step().is_empty());
        h.open_gate();
        assert!(h.mgr.wait_idle(Duration::from_secs(5)));
        assert_eq!(h.mgr.dispatch_log(), vec!["a", "b", "c", "d"]);
        assert_eq!(h.mgr.utilization().nodes.iter().map(|n| n.allocated).sum::<usize>(), 0);
    }

    #[test]
    fn empty_step() {
        let h = Harness::new(SchedulerMode::ManyJob);
        assert!(h.mgr.schedule_loop_step().is_empty());
    }

    #[test]
    fn oversized_job_rejected() {
        let h = Harness::new(SchedulerMode::ManyJob);
        assert!(matches!(
            h.mgr.submit(h.job("big", 0, 17)),
            Err(QtmError::Resource(ResourceError::ExceedsCapacity { .. }))
        ));
    }

    #[test]
    fn per_job_partitions_isolate_sessions() {
        let h = Harness::new(SchedulerMode::PerJob { partition: 0.5 });
        let (s1, s2, s3) = (h.mgr.open_session(), h.mgr.open_session(), h.mgr.open_session());
        assert_eq!(h.mgr.session_capacity(s1).unwrap(), 8);
        assert_eq!(h.mgr.session_capacity(s2).unwrap(), 8);
        assert_eq!(h.mgr.session_capacity(s3), Err(QtmError::NoPartition(s3)));
        assert!(h.mgr.submit(h.job("too-big", s1, 9)).is_err());

        h.mgr.submit(h.job("a", s1, 8)).unwrap();
        h.mgr.submit(h.job("b", s1, 1)).unwrap();
        h.mgr.submit(h.job("c", s2, 8)).unwrap();
        let got = h.started(2);
        let nodes: Vec<_> = got.iter().map(|(l, p)| (l.clone(), p.summary())).collect();
        assert!(nodes.contains(&("a".into(), "node1:8".into())));
        assert!(nodes.contains(&("c".into(), "node2:8".into())));
        assert_eq!(h.mgr.session_utilization(s1).unwrap().queue, 1);

        h.open_gate();
        assert!(h.mgr.wait_idle(Duration::from_secs(5)));
        h.mgr.close_session(s1);
        assert_eq!(h.mgr.session_capacity(s3).unwrap(), 8);
    }

    #[test]
    fn many_job_single_fifo_across_sessions() {
        let h = Harness::new(SchedulerMode::ManyJob);
        let (s1, s2) = (h.mgr.open_session(), h.mgr.open_session());
        h.mgr.submit(h.job("fill", s1, 16)).unwrap();
        h.started(1);
        h.mgr.submit(h.job("s2-a", s2, 4)).unwrap();
        h.mgr.submit(h.job("s1-a", s1, 4)).unwrap();
        h.mgr.submit(h.job("s2-b", s2, 4)).unwrap();
        assert_eq!(h.mgr.utilization().queue, 3);
        h.open_gate();
        assert!(h.mgr.wait_idle(Duration::from_secs(5)));
        assert_eq!(h.mgr.dispatch_log(), vec!["fill", "s2-a", "s1-a", "s2-b"]);
    }

    #[test]
    fn set_mode_requires_quiescence() {
        let h = Harness::new(SchedulerMode::ManyJob);
        h.mgr.submit(h.job("a", 0, 2)).unwrap();
        h.started(1);
        assert_eq!(
            h.mgr.set_mode(SchedulerMode::PerJob { partition: 0.5 }),
            Err(QtmError::Busy(1))
        );
        h.open_gate();
        assert!(h.mgr.wait_idle(Duration::from_secs(5)));
        h.mgr.set_mode(SchedulerMode::PerJob { partition: 0.5 }).unwrap();
        assert_eq!(h.mgr.mode(), SchedulerMode::PerJob { partition: 0.5 });
    }

    #[test]
    fn shutdown_cancels_queued() {
        let h = Harness::new(SchedulerMode::ManyJob);
        h.mgr.submit(h.job("run", 0, 16)).unwrap();
        h.started(1);
        h.mgr.submit(h.job("wait", 0, 1)).unwrap();
        assert_eq!(h.mgr.shutdown("stop"), 1);
        assert_eq!(h.done.recv_timeout(Duration::from_secs(5)).unwrap(), "cancelled:wait");
        assert_eq!(h.mgr.submit(h.job("late", 0, 1)).unwrap_err(), QtmError::ShuttingDown);
        h.open_gate();
        assert!(h.mgr.wait_idle(Duration::from_secs(5)));
    }

    mod ensembles {
        use super::super::*;
        use crate::backend::MockBackend;
        use crate::bench::ghz;
        use crate::qasm::emit;
        use crate::qpm::{TaskInfo, TaskState};

        fn qpm() -> Qpm {
            Qpm::new(NodeSpec::homogeneous(2, 8), SchedulerMode::ManyJob).unwrap()
        }

        fn info(n: usize, shots: u64, seed: u64) -> TaskInfo {
            TaskInfo::new(emit(&ghz(n).unwrap()), n, shots).with_seed(seed)
        }

        #[test]
        fn single_repetition_matches_plain_run() {
            let q = qpm();
            let a = q.create_circuit(info(4, 300, 21)).unwrap();
            let b = q.create_circuit(info(4, 300, 21)).unwrap();
            let plain = q.sync_run(&a).unwrap().result.unwrap();
            let spec = EnsembleSpec {
                cids: vec![b.clone()],
                repetitions: 1,
            };
            assert_eq!(run_ensemble(&q, &spec).unwrap().counts, plain.counts);
            assert_eq!(q.get_result(&b).unwrap().state, TaskState::Done);
        }

        #[test]
        fn repetitions_use_distinct_seeds() {
            assert_eq!(repetition_seed(5, 0), 5);
            assert_ne!(repetition_seed(5, 1), repetition_seed(5, 2));
            let q = qpm();
            let a = q.create_circuit(info(3, 200, 8)).unwrap();
            let merged = run_ensemble(
                &q,
                &EnsembleSpec {
                    cids: vec![a.clone()],
                    repetitions: 5,
                },
            )
            .unwrap();
            assert_eq!(merged.shots, 1000);
            assert_eq!(merged.counts.values().sum::<u64>(), 1000);
            assert!(merged.counts.keys().all(|k| k == "000" || k == "111"));
            let h = q.get_result(&a).unwrap();
            assert_eq!(h.result.unwrap().shots, 1000);
        }

        #[test]
        fn rejects_bad_specs() {
            let q = qpm();
            let a = q.create_circuit(info(3, 10, 1)).unwrap();
            let b = q.create_circuit(info(2, 10, 1)).unwrap();
            assert_eq!(
                run_ensemble(
                    &q,
                    &EnsembleSpec {
                        cids: vec![],
                        repetitions: 2
                    }
                ),
                Err(EnsembleError::Empty)
            );
            assert!(matches!(
                run_ensemble(
                    &q,
                    &EnsembleSpec {
                        cids: vec![a.clone(), b],
                        repetitions: 1
                    }
                ),
                Err(EnsembleError::WidthMismatch {
                    expected: 3,
                    found: 2,
                    ..
                })
            ));
            assert!(matches!(
                run_ensemble(
                    &q,
                    &EnsembleSpec {
                        cids: vec![a.clone(), a.clone()],
                        repetitions: 1
                    }
                ),
                Err(EnsembleError::Qpm(QpmError::Invalid(_)))
            ));
            // rejected specs leave members runnable
            assert_eq!(q.get_result(&a).unwrap().state, TaskState::Created);
        }

        #[test]
        fn member_failure_aborts() {
            let q = qpm();
            q.register_backend(Arc::new(MockBackend::failing("broken", "lost calibration")), false)
                .unwrap();
            let good = q.create_circuit(info(2, 10, 1)).unwrap();
            let bad = q.create_circuit(info(2, 10, 1).with_backend("broken")).unwrap();
            let err = run_ensemble(
                &q,
                &EnsembleSpec {
                    cids: vec![good, bad.clone()],
                    repetitions: 2,
                },
            )
            .unwrap_err();
            match err {
                EnsembleError::MemberFailed { cid, message, .. } => {
                    assert_eq!(cid, bad);
                    assert_eq!(message, "lost calibration");
                }
                other => panic!("{other:?}"),
            }
            assert_eq!(q.get_result(&bad).unwrap().state, TaskState::Failed);
            assert!(q.scheduler().wait_idle(Duration::from_secs(5)));
            assert_eq!(q.utilization().allocated(), 0);
        }
    }
}
