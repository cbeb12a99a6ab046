use std::fmt;

use serde::{Deserialize, Serialize};

/// Gate and non-unitary operation kinds understood by the framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    S,
    Sdg,
    T,
    Tdg,
    Rx,
    Ry,
    Rz,
    U1,
    U2,
    U3,
    Cx,
    Cz,
    Swap,
    Ccx,
    Id,
    Measure,
    Reset,
    Barrier,
}

impl GateKind {
    pub const ALL: [GateKind; 22] = [
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::S,
        GateKind::Sdg,
        GateKind::T,
        GateKind::Tdg,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::U1,
        GateKind::U2,
        GateKind::U3,
        GateKind::Cx,
        GateKind::Cz,
        GateKind::Swap,
        GateKind::Ccx,
        GateKind::Id,
        GateKind::Measure,
        GateKind::Reset,
        GateKind::Barrier,
    ];

    /// The unitary gates, in a fixed order (used by random circuit generation).
    pub const UNITARY: [GateKind; 19] = [
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::S,
        GateKind::Sdg,
        GateKind::T,
        GateKind::Tdg,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::U1,
        GateKind::U2,
        GateKind::U3,
        GateKind::Cx,
        GateKind::Cz,
        GateKind::Swap,
        GateKind::Ccx,
        GateKind::Id,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::S => "s",
            GateKind::Sdg => "sdg",
            GateKind::T => "t",
            GateKind::Tdg => "tdg",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::U1 => "u1",
            GateKind::U2 => "u2",
            GateKind::U3 => "u3",
            GateKind::Cx => "cx",
            GateKind::Cz => "cz",
            GateKind::Swap => "swap",
            GateKind::Ccx => "ccx",
            GateKind::Id => "id",
            GateKind::Measure => "measure",
            GateKind::Reset => "reset",
            GateKind::Barrier => "barrier",
        }
    }

    pub fn from_name(name: &str) -> Option<GateKind> {
        GateKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Number of qubit operands, or `None` for variadic (barrier).
    pub fn qubit_arity(self) -> Option<usize> {
        match self {
            GateKind::Cx | GateKind::Cz | GateKind::Swap => Some(2),
            GateKind::Ccx => Some(3),
            GateKind::Barrier => None,
            _ => Some(1),
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::U1 => 1,
            GateKind::U2 => 2,
            GateKind::U3 => 3,
            _ => 0,
        }
    }

    pub fn is_unitary(self) -> bool {
        !matches!(self, GateKind::Measure | GateKind::Reset | GateKind::Barrier)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One operation in a [`Circuit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clbits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

impl Instruction {
    pub fn gate(kind: GateKind, qubits: &[usize], params: &[f64]) -> Self {
        Instruction {
            kind,
            qubits: qubits.to_vec(),
            clbits: Vec::new(),
            params: params.to_vec(),
        }
    }

    pub fn measure(qubit: usize, clbit: usize) -> Self {
        Instruction {
            kind: GateKind::Measure,
            qubits: vec![qubit],
            clbits: vec![clbit],
            params: Vec::new(),
        }
    }
}

/// Flattened gate-level program: one qubit index space and one clbit index
/// space, instructions in program order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub name: String,
    pub num_qubits: usize,
    pub num_clbits: usize,
    pub instructions: Vec<Instruction>,
}

impl Circuit {
    pub fn new(name: impl Into<String>, num_qubits: usize, num_clbits: usize) -> Self {
        Circuit {
            name: name.into(),
            num_qubits,
            num_clbits,
            instructions: Vec::new(),
        }
    }

    pub fn push(&mut self, instr: Instruction) -> &mut Self {
        self.instructions.push(instr);
        self
    }

    pub fn h(&mut self, q: usize) -> &mut Self {
        self.push(Instruction::gate(GateKind::H, &[q], &[]))
    }

    pub fn cx(&mut self, control: usize, target: usize) -> &mut Self {
        self.push(Instruction::gate(GateKind::Cx, &[control, target], &[]))
    }

    pub fn measure(&mut self, q: usize, c: usize) -> &mut Self {
        self.push(Instruction::measure(q, c))
    }

    /// Equality of register widths and instruction streams; the name is not
    /// part of the program text and is ignored.
    pub fn same_structure(&self, other: &Circuit) -> bool {
        self.num_qubits == other.num_qubits
            && self.num_clbits == other.num_clbits
            && self.instructions == other.instructions
    }

    pub fn count_kind(&self, kind: GateKind) -> usize {
        self.instructions.iter().filter(|i| i.kind == kind).count()
    }

    pub fn has_non_unitary(&self) -> bool {
        self.instructions
            .iter()
            .any(|i| matches!(i.kind, GateKind::Measure | GateKind::Reset))
    }

    /// Number of layers when each instruction is placed after the last layer
    /// touching any of its qubits. Barriers do not add depth.
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.num_qubits];
        let mut depth = 0;
        for instr in &self.instructions {
            if instr.kind == GateKind::Barrier {
                continue;
            }
            let top = instr
                .qubits
                .iter()
                .filter_map(|&q| level.get(q).copied())
                .max()
                .unwrap_or(0)
                + 1;
            for &q in &instr.qubits {
                if let Some(l) = level.get_mut(q) {
                    *l = top;
                }
            }
            depth = depth.max(top);
        }
        depth
    }
}
