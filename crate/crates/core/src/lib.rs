//! Quantum framework core: OpenQASM 2.0 frontend, state-vector simulator,
//! resource manager, task manager, platform manager and network service.

pub mod backend;
pub mod bench;
pub mod qasm;
pub mod qpm;
pub mod qtm;
pub mod resource;
pub mod service;
pub mod sim;

pub use backend::{Backend, BackendDescriptor, BackendKind, BackendRegistry, MockBackend, StatevectorBackend};
pub use qasm::{Circuit, GateKind, Instruction, ParseError};
pub use qpm::{Cid, CircuitHandle, Qpm, QpmError, SyncRunOutput, TaskInfo, TaskState};
pub use qtm::{EnsembleSpec, SchedulerMode, TaskManager};
pub use resource::{NodeSpec, Placement, ResourceManager, Utilization};
pub use sim::{ExecutionResult, SimConfig};
