//! Execution backends and the registry the platform manager selects from.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::qasm::Circuit;
use crate::sim::{self, ExecutionResult, ExecutionStats, SimConfig, SimError, DEFAULT_MAX_QUBITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Statevector,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub max_qubits: usize,
    pub default: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("backend failure: {0}")]
    Failed(String),
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> BackendKind;
    fn max_qubits(&self) -> usize;
    fn run(&self, circuit: &Circuit, shots: u64, opts: RunOptions) -> Result<ExecutionResult, BackendError>;
}

/// The reference dense simulator.
#[derive(Debug, Clone)]
pub struct StatevectorBackend {
    name: String,
    max_qubits: usize,
}

impl StatevectorBackend {
    pub fn new(name: impl Into<String>) -> Self {
        StatevectorBackend {
            name: name.into(),
            max_qubits: DEFAULT_MAX_QUBITS,
        }
    }

    pub fn with_max_qubits(mut self, max_qubits: usize) -> Self {
        self.max_qubits = max_qubits;
        self
    }
}

impl Default for StatevectorBackend {
    fn default() -> Self {
        StatevectorBackend::new("statevector")
    }
}

impl Backend for StatevectorBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Statevector
    }

    fn max_qubits(&self) -> usize {
        self.max_qubits
    }

    fn run(&self, circuit: &Circuit, shots: u64, opts: RunOptions) -> Result<ExecutionResult, BackendError> {
        let config = SimConfig {
            max_qubits: self.max_qubits,
            workers: opts.workers,
            seed: Some(opts.seed),
        };
        let mut result = sim::run(circuit, shots, &config)?;
        result.stats.backend = self.name.clone();
        Ok(result)
    }
}

/// Sleeps for a fixed latency and reports every shot as the all-zeros
/// bitstring. Used to exercise scheduling without simulation cost.
#[derive(Debug, Clone)]
pub struct MockBackend {
    name: String,
    latency: Duration,
    max_qubits: usize,
    failure: Option<String>,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, latency: Duration) -> Self {
        MockBackend {
            name: name.into(),
            latency,
            max_qubits: 1024,
            failure: None,
        }
    }

    /// A mock that sleeps, then fails every run with `message`.
    pub fn failing(name: impl Into<String>, message: impl Into<String>) -> Self {
        MockBackend {
            failure: Some(message.into()),
            ..MockBackend::new(name, Duration::ZERO)
        }
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn max_qubits(&self) -> usize {
        self.max_qubits
    }

    fn run(&self, circuit: &Circuit, shots: u64, opts: RunOptions) -> Result<ExecutionResult, BackendError> {
        let started = Instant::now();
        std::thread::sleep(self.latency);
        if let Some(msg) = &self.failure {
            return Err(BackendError::Failed(msg.clone()));
        }
        if shots == 0 {
            return Err(SimError::NoShots.into());
        }
        Ok(ExecutionResult {
            counts: BTreeMap::from([("0".repeat(circuit.num_clbits), shots)]),
            shots,
            stats: ExecutionStats {
                wall_time_seconds: started.elapsed().as_secs_f64(),
                backend: self.name.clone(),
                workers: opts.workers,
                num_qubits: circuit.num_qubits,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("backend '{0}' is already registered")]
    Duplicate(String),
    #[error("unknown backend '{0}'")]
    Unknown(String),
    #[error("no backends registered")]
    Empty,
}

struct Entry {
    backend: Arc<dyn Backend>,
}

/// Named backends; the first registered one is the default unless another is
/// marked explicitly.
#[derive(Default)]
pub struct BackendRegistry {
    entries: RwLock<(Vec<Entry>, Option<String>)>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        BackendRegistry::default()
    }

    /// `statevector` (default) and a zero-latency `mock`.
    pub fn with_defaults() -> Self {
        let r = BackendRegistry::new();
        r.register(Arc::new(StatevectorBackend::default()), true)
            .expect("fresh registry");
        r.register(Arc::new(MockBackend::new("mock", Duration::ZERO)), false)
            .expect("fresh registry");
        r
    }

    pub fn register(&self, backend: Arc<dyn Backend>, make_default: bool) -> Result<(), RegistryError> {
        let mut guard = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let (entries, default) = &mut *guard;
        if entries.iter().any(|e| e.backend.name() == backend.name()) {
            return Err(RegistryError::Duplicate(backend.name().to_string()));
        }
        if make_default || default.is_none() {
            *default = Some(backend.name().to_string());
        }
        entries.push(Entry { backend });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Backend>, RegistryError> {
        let guard = self.entries.read().unwrap_or_else(|e| e.into_inner());
        guard
            .0
            .iter()
            .find(|e| e.backend.name() == name)
            .map(|e| e.backend.clone())
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))
    }

    /// The named backend, or the default when `name` is `None`.
    pub fn select(&self, name: Option<&str>) -> Result<Arc<dyn Backend>, RegistryError> {
        match name {
            Some(n) => self.get(n),
            None => {
                let default = {
                    let guard = self.entries.read().unwrap_or_else(|e| e.into_inner());
                    guard.1.clone().ok_or(RegistryError::Empty)?
                };
                self.get(&default)
            }
        }
    }

    pub fn list(&self) -> Vec<BackendDescriptor> {
        let guard = self.entries.read().unwrap_or_else(|e| e.into_inner());
        guard
            .0
            .iter()
            .map(|e| BackendDescriptor {
                name: e.backend.name().to_string(),
                kind: e.backend.kind(),
                max_qubits: e.backend.max_qubits(),
                default: guard.1.as_deref() == Some(e.backend.name()),
            })
            .collect()
    }
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.list()).finish()
    }
}
