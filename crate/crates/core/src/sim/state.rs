use num_complex::Complex64;
use rand::Rng;

use super::gates::{matrix, GateMatrix};
use super::SimError;
use crate::qasm::Instruction;

/// States below this size are updated on the calling thread regardless of the
/// worker count; the arithmetic is identical either way.
const PARALLEL_MIN_QUBITS: usize = 10;

/// Dense `2^n` amplitude vector. Qubit 0 is the least-significant bit of the
/// amplitude index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

/// Sparse row form of a gate matrix scattered onto global index offsets.
struct Kernel {
    qubits: Vec<usize>,
    mask: usize,
    // offsets[local] = global bits for local basis index
    offsets: Vec<usize>,
    // rows[local_row] = nonzero (local_col, value)
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl Kernel {
    fn new(m: &GateMatrix, qubits: &[usize]) -> Self {
        let dim = m.dim();
        let offsets: Vec<usize> = (0..dim)
            .map(|local| {
                qubits
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| local >> j & 1 == 1)
                    .fold(0, |acc, (_, &q)| acc | 1 << q)
            })
            .collect();
        let rows = (0..dim)
            .map(|r| {
                (0..dim)
                    .filter_map(|col| {
                        let v = m.get(r, col);
                        (v != Complex64::new(0.0, 0.0)).then_some((col, v))
                    })
                    .collect()
            })
            .collect();
        Kernel {
            qubits: qubits.to_vec(),
            mask: offsets[dim - 1],
            offsets,
            rows,
        }
    }

    fn local_row(&self, index: usize) -> usize {
        self.qubits
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &q)| acc | (index >> q & 1) << j)
    }

    /// Fill `out`, which holds global indices `first..first + out.len()`.
    fn gather(&self, old: &[Complex64], out: &mut [Complex64], first: usize) {
        for (k, slot) in out.iter_mut().enumerate() {
            let i = first + k;
            let base = i & !self.mask;
            let row = &self.rows[self.local_row(i)];
            *slot = row.iter().map(|&(col, v)| v * old[base | self.offsets[col]]).sum();
        }
    }
}

impl StateVector {
    /// `|0...0>` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        StateVector { num_qubits, amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Option<Self> {
        if !amplitudes.len().is_power_of_two() {
            return None;
        }
        Some(StateVector {
            num_qubits: amplitudes.len().trailing_zeros() as usize,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_operands(&self, instr: &Instruction) -> Result<(), SimError> {
        for &q in &instr.qubits {
            if q >= self.num_qubits {
                return Err(SimError::QubitOutOfRange {
                    qubit: q,
                    num_qubits: self.num_qubits,
                });
            }
        }
        Ok(())
    }

    /// Apply a unitary instruction, splitting the output index space into
    /// `workers` contiguous blocks.
    pub fn apply(&mut self, instr: &Instruction, workers: usize) -> Result<(), SimError> {
        self.check_operands(instr)?;
        let m = matrix(instr.kind, &instr.params).ok_or(SimError::NonUnitary(instr.kind))?;
        let kernel = Kernel::new(&m, &instr.qubits);
        let old = std::mem::take(&mut self.amplitudes);
        let mut out = vec![Complex64::new(0.0, 0.0); old.len()];
        let workers = workers.max(1);
        if workers == 1 || self.num_qubits < PARALLEL_MIN_QUBITS {
            kernel.gather(&old, &mut out, 0);
        } else {
            let block = old.len().div_ceil(workers);
            std::thread::scope(|s| {
                for (b, chunk) in out.chunks_mut(block).enumerate() {
                    let (kernel, old) = (&kernel, &old);
                    s.spawn(move || kernel.gather(old, chunk, b * block));
                }
            });
        }
        self.amplitudes = out;
        Ok(())
    }

    /// Probability that `qubit` reads 1.
    pub fn prob_one(&self, qubit: usize) -> f64 {
        let bit = 1 << qubit;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Projective measurement of one qubit using a uniform draw from `rng`.
    pub fn measure<R: Rng + ?Sized>(&mut self, qubit: usize, rng: &mut R) -> u8 {
        let p1 = self.prob_one(qubit);
        let outcome = u8::from(rng.random::<f64>() < p1);
        self.collapse(qubit, outcome, if outcome == 1 { p1 } else { 1.0 - p1 });
        outcome
    }

    fn collapse(&mut self, qubit: usize, outcome: u8, prob: f64) {
        let bit = 1 << qubit;
        let scale = 1.0 / prob.sqrt();
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if ((i & bit != 0) as u8) == outcome {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Measure and force the qubit back to `|0>`.
    pub fn reset<R: Rng + ?Sized>(&mut self, qubit: usize, rng: &mut R) {
        if self.measure(qubit, rng) == 1 {
            let bit = 1 << qubit;
            for i in 0..self.amplitudes.len() {
                if i & bit == 0 {
                    self.amplitudes.swap(i, i | bit);
                }
            }
        }
    }
}

/// Apply one unitary instruction to `state`, returning the new state.
pub fn apply_gate(mut state: StateVector, instr: &Instruction) -> Result<StateVector, SimError> {
    if !instr.kind.is_unitary() {
        return Err(SimError::NonUnitary(instr.kind));
    }
    state.apply(instr, 1)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasm::GateKind;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(kind: GateKind, q: &[usize], p: &[f64]) -> Instruction {
        Instruction::gate(kind, q, p)
    }

    #[test]
    fn hadamard_on_zero() {
        let s = apply_gate(StateVector::zero(1), &g(GateKind::H, &[0], &[])).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(s.amplitudes()[0].re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].re, r, epsilon = 1e-15);
    }

    #[test]
    fn cnot_truth_table_lsb_order() {
        // |01> = index 1: qubit 0 set
        let s = apply_gate(StateVector::zero(2), &g(GateKind::X, &[0], &[])).unwrap();
        let s = apply_gate(s, &g(GateKind::Cx, &[0, 1], &[])).unwrap();
        assert_eq!(s.amplitudes()[3], Complex64::new(1.0, 0.0));
        let s = apply_gate(s, &g(GateKind::Cx, &[1, 0], &[])).unwrap();
        assert_eq!(s.amplitudes()[2], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn rz_inverse_pair() {
        let mut s = StateVector::zero(2);
        s.apply(&g(GateKind::H, &[0], &[]), 1).unwrap();
        s.apply(&g(GateKind::Ry, &[1], &[0.7]), 1).unwrap();
        let before = s.clone();
        s.apply(&g(GateKind::Rz, &[1], &[1.234]), 1).unwrap();
        s.apply(&g(GateKind::Rz, &[1], &[-1.234]), 1).unwrap();
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_operands() {
        assert!(matches!(
            apply_gate(StateVector::zero(1), &g(GateKind::X, &[1], &[])),
            Err(SimError::QubitOutOfRange { .. })
        ));
        assert!(matches!(
            apply_gate(StateVector::zero(1), &Instruction::measure(0, 0)),
            Err(SimError::NonUnitary(GateKind::Measure))
        ));
    }

    #[test]
    fn threaded_blocks_match_single_thread() {
        let mut a = StateVector::zero(12);
        let ops = [
            g(GateKind::H, &[11], &[]),
            g(GateKind::U3, &[3], &[0.2, 0.5, -0.9]),
            g(GateKind::Cx, &[11, 0], &[]),
            g(GateKind::Ccx, &[3, 0, 7], &[]),
            g(GateKind::Swap, &[7, 10], &[]),
        ];
        let mut b = a.clone();
        for op in &ops {
            a.apply(op, 1).unwrap();
            b.apply(op, 3).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn measure_collapses() {
        let mut s = StateVector::zero(2);
        s.apply(&g(GateKind::H, &[0], &[]), 1).unwrap();
        s.apply(&g(GateKind::Cx, &[0, 1], &[]), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = s.measure(0, &mut rng);
        let expect = if m == 1 { 3 } else { 0 };
        assert_abs_diff_eq!(s.amplitudes()[expect].norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.prob_one(1), m as f64, epsilon = 1e-12);
    }

    #[test]
    fn reset_returns_to_zero() {
        let mut s = StateVector::zero(1);
        s.apply(&g(GateKind::X, &[0], &[]), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        s.reset(0, &mut rng);
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
    }
}
