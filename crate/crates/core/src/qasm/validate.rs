use super::circuit::{Circuit, GateKind};

/// Check every structural invariant of `circuit`, returning one description
/// per violation. An empty list means the circuit is well formed.
pub fn validate(circuit: &Circuit) -> Vec<String> {
    let mut out = Vec::new();
    for (i, instr) in circuit.instructions.iter().enumerate() {
        let kind = instr.kind;
        if let Some(n) = kind.qubit_arity() {
            if instr.qubits.len() != n {
                out.push(format!(
                    "instruction {i} ({kind}) has {} qubit operand(s), expected {n}",
                    instr.qubits.len()
                ));
            }
        } else if instr.qubits.is_empty() {
            out.push(format!("instruction {i} ({kind}) has no qubit operands"));
        }
        let want_clbits = usize::from(kind == GateKind::Measure);
        if instr.clbits.len() != want_clbits {
            out.push(format!(
                "instruction {i} ({kind}) has {} clbit operand(s), expected {want_clbits}",
                instr.clbits.len()
            ));
        }
        if instr.params.len() != kind.param_count() {
            out.push(format!(
                "instruction {i} ({kind}) has {} parameter(s), expected {}",
                instr.params.len(),
                kind.param_count()
            ));
        }
        if instr.params.iter().any(|p| !p.is_finite()) {
            out.push(format!("instruction {i} ({kind}) has a non-finite parameter"));
        }
        for (j, q) in instr.qubits.iter().enumerate() {
            if instr.qubits[..j].contains(q) {
                out.push(format!("duplicate qubit operand in instruction {i}"));
                break;
            }
        }
        for &q in &instr.qubits {
            if q >= circuit.num_qubits {
                out.push(format!(
                    "instruction {i} ({kind}) qubit {q} out of range for {} qubit(s)",
                    circuit.num_qubits
                ));
            }
        }
        for &c in &instr.clbits {
            if c >= circuit.num_clbits {
                out.push(format!(
                    "instruction {i} ({kind}) clbit {c} out of range for {} clbit(s)",
                    circuit.num_clbits
                ));
            }
        }
    }
    out
}
