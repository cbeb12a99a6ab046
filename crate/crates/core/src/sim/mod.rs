//! Reference dense state-vector backend.
//!
//! [`run`] simulates the unitary prefix of a circuit once. If every
//! measurement is terminal it samples the final distribution `shots` times by
//! inverse CDF; otherwise each shot re-executes the suffix starting at the
//! first measure/reset, collapsing the state as it goes. Shots are grouped
//! into fixed chunks of [`SHOT_CHUNK`]; chunk `k` draws from a ChaCha stream
//! keyed by `(seed, k)`, and workers take whole chunks, so counts do not
//! depend on how shots are split across workers.

mod gates;
mod state;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gates::{matrix, GateMatrix};
pub use state::{apply_gate, StateVector};

use crate::qasm::{validate, Circuit, GateKind};

pub const DEFAULT_MAX_QUBITS: usize = 24;

/// Shot counts below this are sampled on the calling thread.
const PARALLEL_MIN_SHOTS: u64 = 2048;

/// Shots sharing one random stream.
pub const SHOT_CHUNK: u64 = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("circuit needs {requested} qubits but the backend allows at most {max}")]
    QubitBudget { requested: usize, max: usize },
    #[error("invalid circuit: {}", .0.join("; "))]
    InvalidCircuit(Vec<String>),
    #[error("qubit {qubit} out of range for {num_qubits} qubit(s)")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("'{0}' is not a unitary instruction")]
    NonUnitary(GateKind),
    #[error("shots must be at least 1")]
    NoShots,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_qubits: usize,
    pub workers: usize,
    pub seed: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_qubits: DEFAULT_MAX_QUBITS,
            workers: 1,
            seed: None,
        }
    }
}

impl SimConfig {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn check(&self) -> Result<(), SimError> {
        if self.workers == 0 {
            return Err(SimError::Config("workers must be at least 1".into()));
        }
        if self.max_qubits == 0 {
            return Err(SimError::Config("max_qubits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub wall_time_seconds: f64,
    pub backend: String,
    pub workers: usize,
    pub num_qubits: usize,
}

/// Bitstring histogram. Keys are clbit-ordered with clbit 0 rightmost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
    pub stats: ExecutionStats,
}

impl ExecutionResult {
    /// Add another histogram into this one.
    pub fn merge_counts(&mut self, other: &ExecutionResult) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
        self.shots += other.shots;
    }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn bitstring(clbits: &[u8]) -> String {
    clbits.iter().rev().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

fn check_circuit(circuit: &Circuit, config: &SimConfig) -> Result<(), SimError> {
    config.check()?;
    if circuit.num_qubits > config.max_qubits {
        return Err(SimError::QubitBudget {
            requested: circuit.num_qubits,
            max: config.max_qubits,
        });
    }
    let violations = validate(circuit);
    if !violations.is_empty() {
        return Err(SimError::InvalidCircuit(violations));
    }
    Ok(())
}

/// Split the shot chunks into at most `workers` contiguous ranges and fold
/// each range's histogram into one map. `sample` gets the shot range and the
/// chunk's generator; range boundaries do not affect the result.
fn sample_blocks<F>(shots: u64, seed: u64, workers: usize, sample: F) -> BTreeMap<String, u64>
where
    F: Fn(std::ops::Range<u64>, &mut ChaCha8Rng, &mut BTreeMap<String, u64>) + Sync,
{
    let chunks = shots.div_ceil(SHOT_CHUNK);
    let workers = if shots < PARALLEL_MIN_SHOTS { 1 } else { workers as u64 };
    let block = chunks.div_ceil(workers);
    let ranges: Vec<_> = (0..workers)
        .map(|w| (w * block).min(chunks)..((w + 1) * block).min(chunks))
        .filter(|r| !r.is_empty())
        .collect();
    let run_chunks = |chunk_range: std::ops::Range<u64>| {
        let mut part = BTreeMap::new();
        for chunk in chunk_range {
            let mut rng = chunk_rng(seed, chunk);
            let shots = chunk * SHOT_CHUNK..((chunk + 1) * SHOT_CHUNK).min(shots);
            sample(shots, &mut rng, &mut part);
        }
        part
    };
    let parts: Vec<BTreeMap<String, u64>> = if ranges.len() <= 1 {
        ranges.into_iter().map(&run_chunks).collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = ranges
                .into_iter()
                .map(|r| {
                    let run_chunks = &run_chunks;
                    s.spawn(move || run_chunks(r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling worker panicked"))
                .collect()
        })
    };
    let mut counts = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    counts
}

/// Execute `circuit` and draw `shots` measurement samples.
pub fn run(circuit: &Circuit, shots: u64, config: &SimConfig) -> Result<ExecutionResult, SimError> {
    let started = Instant::now();
    check_circuit(circuit, config)?;
    if shots == 0 {
        return Err(SimError::NoShots);
    }
    let seed = config.seed.unwrap_or_else(rand::random);
    let instrs = &circuit.instructions;
    let split = instrs
        .iter()
        .position(|i| matches!(i.kind, GateKind::Measure | GateKind::Reset))
        .unwrap_or(instrs.len());
    let (prefix, suffix) = instrs.split_at(split);

    let mut state = StateVector::zero(circuit.num_qubits);
    for instr in prefix.iter().filter(|i| i.kind != GateKind::Barrier) {
        state.apply(instr, config.workers)?;
    }

    let terminal = suffix
        .iter()
        .all(|i| matches!(i.kind, GateKind::Measure | GateKind::Barrier));
    let num_clbits = circuit.num_clbits;

    let counts = if terminal {
        let measured: Vec<(usize, usize)> = suffix
            .iter()
            .filter(|i| i.kind == GateKind::Measure)
            .map(|i| (i.qubits[0], i.clbits[0]))
            .collect();
        let mut cdf = state.probabilities();
        let mut acc = 0.0;
        for p in cdf.iter_mut() {
            acc += *p;
            *p = acc;
        }
        let total = acc;
        sample_blocks(shots, seed, config.workers, |range, rng, part| {
            let mut bits = vec![0u8; num_clbits];
            for _ in range {
                let u = rng.random::<f64>() * total;
                let index = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                for &(q, c) in &measured {
                    bits[c] = (index >> q & 1) as u8;
                }
                *part.entry(bitstring(&bits)).or_insert(0) += 1;
            }
        })
    } else {
        let state = &state;
        sample_blocks(shots, seed, config.workers, |range, rng, part| {
            for _ in range {
                let mut traj = state.clone();
                let mut bits = vec![0u8; num_clbits];
                for instr in suffix {
                    match instr.kind {
                        GateKind::Barrier => {}
                        GateKind::Measure => bits[instr.clbits[0]] = traj.measure(instr.qubits[0], rng),
                        GateKind::Reset => traj.reset(instr.qubits[0], rng),
                        _ => traj.apply(instr, 1).expect("circuit validated"),
                    }
                }
                *part.entry(bitstring(&bits)).or_insert(0) += 1;
            }
        })
    };

    Ok(ExecutionResult {
        counts,
        shots,
        stats: ExecutionStats {
            wall_time_seconds: started.elapsed().as_secs_f64(),
            backend: "statevector".into(),
            workers: config.workers,
            num_qubits: circuit.num_qubits,
        },
    })
}

/// Exact final state of a measurement-free circuit.
pub fn final_amplitudes(circuit: &Circuit, config: &SimConfig) -> Result<StateVector, SimError> {
    check_circuit(circuit, config)?;
    if let Some(bad) = circuit
        .instructions
        .iter()
        .find(|i| matches!(i.kind, GateKind::Measure | GateKind::Reset))
    {
        return Err(SimError::NonUnitary(bad.kind));
    }
    let mut state = StateVector::zero(circuit.num_qubits);
    for instr in circuit.instructions.iter().filter(|i| i.kind != GateKind::Barrier) {
        state.apply(instr, config.workers)?;
    }
    Ok(state)
}
