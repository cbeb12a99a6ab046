//! Benchmark workloads and the client-side campaign driver.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::qasm::{emit, Circuit, GateKind, Instruction};
use crate::qpm::{Cid, TaskInfo, TaskState};
use crate::service::{Client, ClientError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid workload: {0}")]
pub struct WorkloadError(pub String);

/// `n`-qubit GHZ: H on qubit 0, a CX chain, then every qubit measured into
/// the clbit of the same index.
pub fn ghz(n: usize) -> Result<Circuit, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError("GHZ needs at least one qubit".into()));
    }
    let mut c = Circuit::new(format!("ghz{n}"), n, n);
    c.h(0);
    for k in 1..n {
        c.cx(k - 1, k);
    }
    for q in 0..n {
        c.measure(q, q);
    }
    Ok(c)
}

/// Layered random unitary circuit. Each layer touches every qubit at most
/// once. Deterministic in `seed`; no measurements.
pub fn random_circuit(n: usize, depth: usize, seed: u64) -> Result<Circuit, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError("random circuit needs at least one qubit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Circuit::new(format!("random{n}x{depth}s{seed}"), n, n);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..depth {
        order.shuffle(&mut rng);
        let mut rest = &order[..];
        while !rest.is_empty() {
            let fits: Vec<GateKind> = GateKind::UNITARY
                .iter()
                .copied()
                .filter(|k| k.qubit_arity().is_some_and(|a| a <= rest.len()))
                .collect();
            let kind = fits[rng.random_range(0..fits.len())];
            let arity = kind.qubit_arity().expect("unitary gates have fixed arity");
            let params: Vec<f64> = (0..kind.param_count())
                .map(|_| rng.random_range(-std::f64::consts::TAU..std::f64::consts::TAU))
                .collect();
            c.push(Instruction::gate(kind, &rest[..arity], &params));
            rest = &rest[arity..];
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Sequential,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workload: String,
    pub tasks: usize,
    pub mode: BenchMode,
    pub wall_time_seconds: f64,
    pub per_task_seconds: Vec<f64>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            BenchMode::Sequential => "sequential",
            BenchMode::Concurrent => "concurrent",
        };
        let _ = writeln!(out, "workload  {}", self.workload);
        let _ = writeln!(out, "mode      {mode}");
        let _ = writeln!(out, "tasks     {}", self.tasks);
        let _ = writeln!(out, "wall (s)  {:.4}", self.wall_time_seconds);
        let _ = writeln!(out, "{:>6}  {:>10}", "task", "seconds");
        for (i, t) in self.per_task_seconds.iter().enumerate() {
            let _ = writeln!(out, "{i:>6}  {t:>10.4}");
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("task {index} failed: {source}")]
    Task {
        index: usize,
        #[source]
        source: ClientError,
        /// Timings of the tasks that completed before the failure.
        partial: Box<BenchReport>,
    },
    #[error("task {index} ({cid}) finished in state {state}: {message}")]
    TaskFailed {
        index: usize,
        cid: Cid,
        state: TaskState,
        message: String,
        partial: Box<BenchReport>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub workload: String,
    pub circuit: Circuit,
    pub count: usize,
    pub concurrent: bool,
    pub backend: Option<String>,
    pub shots: u64,
    pub seed: Option<u64>,
}

impl Campaign {
    pub fn new(workload: impl Into<String>, circuit: Circuit, count: usize) -> Self {
        Campaign {
            workload: workload.into(),
            circuit,
            count,
            concurrent: false,
            backend: None,
            shots: 1024,
            seed: None,
        }
    }
}

const POLL: Duration = Duration::from_millis(2);

/// Submit `count` copies of the workload. Sequential mode runs each with
/// `sync_run`; concurrent mode submits all with `async_run` and then polls
/// until all are terminal. The first failure aborts with a partial report.
pub fn run_campaign(client: &mut Client, campaign: &Campaign) -> Result<BenchReport, CampaignError> {
    if campaign.count == 0 {
        return Err(CampaignError::Usage("task count must be at least 1".into()));
    }
    let qasm = emit(&campaign.circuit);
    let mut info = TaskInfo::new(qasm, campaign.circuit.num_qubits, campaign.shots);
    info.backend = campaign.backend.clone();
    info.seed = campaign.seed;
    let mode = if campaign.concurrent {
        BenchMode::Concurrent
    } else {
        BenchMode::Sequential
    };
    let mut report = BenchReport {
        workload: campaign.workload.clone(),
        tasks: 0,
        mode,
        wall_time_seconds: 0.0,
        per_task_seconds: Vec::new(),
    };
    let started = Instant::now();
    let fail = |index: usize, source: ClientError, report: &BenchReport| CampaignError::Task {
        index,
        source,
        partial: Box::new(report.clone()),
    };

    let mut cids = Vec::with_capacity(campaign.count);
    for i in 0..campaign.count {
        cids.push(client.create_circuit(&info).map_err(|e| fail(i, e, &report))?);
    }

    if !campaign.concurrent {
        for (i, cid) in cids.iter().enumerate() {
            let t = Instant::now();
            let out = client.sync_run(cid).map_err(|e| fail(i, e, &report))?;
            if out.rc != 0 {
                return Err(CampaignError::TaskFailed {
                    index: i,
                    cid: cid.clone(),
                    state: TaskState::Failed,
                    message: out.error.unwrap_or_default(),
                    partial: Box::new(finish(report, started)),
                });
            }
            report.per_task_seconds.push(t.elapsed().as_secs_f64());
            report.tasks += 1;
        }
        return Ok(finish(report, started));
    }

    let mut submitted = Vec::with_capacity(cids.len());
    for (i, cid) in cids.iter().enumerate() {
        submitted.push(Instant::now());
        client.async_run(cid).map_err(|e| fail(i, e, &report))?;
    }
    let mut done: Vec<Option<f64>> = vec![None; cids.len()];
    while done.iter().any(Option::is_none) {
        for (i, cid) in cids.iter().enumerate() {
            if done[i].is_some() {
                continue;
            }
            let h = client.get_result(cid).map_err(|e| fail(i, e, &report))?;
            match h.state {
                TaskState::Done => {
                    done[i] = Some(submitted[i].elapsed().as_secs_f64());
                    report.tasks += 1;
                }
                TaskState::Failed => {
                    report.per_task_seconds = done.iter().flatten().copied().collect();
                    return Err(CampaignError::TaskFailed {
                        index: i,
                        cid: cid.clone(),
                        state: h.state,
                        message: h.error.unwrap_or_default(),
                        partial: Box::new(finish(report, started)),
                    });
                }
                _ => {}
            }
        }
        if done.iter().any(Option::is_none) {
            std::thread::sleep(POLL);
        }
    }
    report.per_task_seconds = done.into_iter().flatten().collect();
    Ok(finish(report, started))
}

fn finish(mut report: BenchReport, started: Instant) -> BenchReport {
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ghz_shape() {
        let c = ghz(4).unwrap();
        assert_eq!(c.count_kind(GateKind::H), 1);
        assert_eq!(c.count_kind(GateKind::Cx), 3);
        assert_eq!(c.count_kind(GateKind::Measure), 4);
        assert!(ghz(0).is_err());
        assert_eq!(ghz(1).unwrap().instructions.len(), 2);
    }

    #[test]
    fn random_circuit_is_deterministic() {
        let a = random_circuit(5, 8, 3).unwrap();
        assert_eq!(a, random_circuit(5, 8, 3).unwrap());
        assert_ne!(a, random_circuit(5, 8, 4).unwrap());
        assert!(!a.has_non_unitary());
        assert!(crate::qasm::validate(&a).is_empty());
        // every layer covers all qubits
        let touched: usize = a.instructions.iter().map(|i| i.qubits.len()).sum();
        assert_eq!(touched, 5 * 8);
    }

    #[test]
    fn report_formats() {
        let r = BenchReport {
            workload: "ghz20".into(),
            tasks: 2,
            mode: BenchMode::Concurrent,
            wall_time_seconds: 0.5,
            per_task_seconds: vec![0.25, 0.5],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["mode"], "concurrent");
        assert!(r.to_table().contains("concurrent"));
    }
}
