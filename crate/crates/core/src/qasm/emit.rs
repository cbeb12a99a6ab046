use std::fmt::Write;

use super::circuit::{Circuit, GateKind};

/// Render a circuit as an OpenQASM 2.0 program over one `q` register and one
/// `c` register. Angles use the shortest decimal form that parses back to the
/// same `f64`.
pub fn emit(circuit: &Circuit) -> String {
    let mut out = String::from("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
    if circuit.num_qubits > 0 {
        let _ = writeln!(out, "qreg q[{}];", circuit.num_qubits);
    }
    if circuit.num_clbits > 0 {
        let _ = writeln!(out, "creg c[{}];", circuit.num_clbits);
    }
    for instr in &circuit.instructions {
        match instr.kind {
            GateKind::Measure => {
                let _ = writeln!(out, "measure q[{}] -> c[{}];", instr.qubits[0], instr.clbits[0]);
            }
            kind => {
                out.push_str(kind.name());
                if !instr.params.is_empty() {
                    out.push('(');
                    for (i, p) in instr.params.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{p:?}");
                    }
                    out.push(')');
                }
                for (i, q) in instr.qubits.iter().enumerate() {
                    out.push_str(if i == 0 { " " } else { "," });
                    let _ = write!(out, "q[{q}]");
                }
                out.push_str(";\n");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasm::{parse, Instruction};
    use std::f64::consts::PI;

    #[test]
    fn single_hadamard() {
        let mut c = Circuit::new("t", 1, 0);
        c.h(0);
        let text = emit(&c);
        assert_eq!(text.matches("h q[0];").count(), 1);
        assert!(!text.contains("creg"));
    }

    #[test]
    fn angle_round_trip_precision() {
        let mut c = Circuit::new("t", 1, 0);
        c.push(Instruction::gate(GateKind::Rz, &[0], &[PI / 4.0]));
        c.push(Instruction::gate(GateKind::U3, &[0], &[1e-300, -2.5e17, -0.0]));
        let back = parse(&emit(&c)).unwrap();
        assert!((back.instructions[0].params[0] - PI / 4.0).abs() < 1e-12);
        assert!(back.same_structure(&c));
    }

    #[test]
    fn barrier_and_measure_syntax() {
        let mut c = Circuit::new("t", 3, 2);
        c.push(Instruction::gate(GateKind::Barrier, &[2, 0], &[]));
        c.measure(2, 1);
        let text = emit(&c);
        assert!(text.contains("barrier q[2],q[0];"));
        assert!(text.contains("measure q[2] -> c[1];"));
        assert!(parse(&text).unwrap().same_structure(&c));
    }
}
