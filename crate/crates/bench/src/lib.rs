//! Shared inputs for the criterion benches.

use qfw_core::bench::{ghz, random_circuit};
use qfw_core::qasm::{emit, Circuit};

/// Qubit counts swept by the simulator benches.
pub const GHZ_SIZES: [usize; 4] = [8, 12, 16, 20];

pub fn ghz_circuit(n: usize) -> Circuit {
    ghz(n).expect("n >= 1")
}

/// QASM text of a layered random circuit, measured at the end.
pub fn random_program(n: usize, depth: usize, seed: u64) -> String {
    let mut c = random_circuit(n, depth, seed).expect("n >= 1");
    for q in 0..n {
        c.measure(q, q);
    }
    emit(&c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_parse() {
        let src = random_program(6, 10, 1);
        assert_eq!(qfw_core::qasm::parse(&src).unwrap().num_qubits, 6);
        assert_eq!(ghz_circuit(GHZ_SIZES[0]).num_qubits, 8);
    }
}
