//! Textbook gate matrices. Local basis index bit `j` belongs to the
//! instruction's `j`-th qubit operand (operand 0 is least significant).

use num_complex::Complex64;

use crate::qasm::GateKind;

/// Row-major `2^k x 2^k` unitary on `k` operands.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    pub arity: usize,
    pub data: Vec<Complex64>,
}

impl GateMatrix {
    pub fn dim(&self) -> usize {
        1 << self.arity
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim() + col]
    }

    fn from_rows(arity: usize, rows: &[&[Complex64]]) -> Self {
        GateMatrix {
            arity,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    fn permutation(arity: usize, perm: &[usize]) -> Self {
        let dim = 1 << arity;
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (col, &row) in perm.iter().enumerate() {
            data[row * dim + col] = Complex64::new(1.0, 0.0);
        }
        GateMatrix { arity, data }
    }

    fn diagonal(arity: usize, diag: &[Complex64]) -> Self {
        let dim = 1 << arity;
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for (i, d) in diag.iter().enumerate() {
            data[i * dim + i] = *d;
        }
        GateMatrix { arity, data }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn u3(theta: f64, phi: f64, lambda: f64) -> GateMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    GateMatrix::from_rows(
        1,
        &[
            &[c(co, 0.0), -Complex64::from_polar(s, lambda)],
            &[Complex64::from_polar(s, phi), Complex64::from_polar(co, phi + lambda)],
        ],
    )
}

/// Matrix for a unitary gate kind, or `None` for measure/reset/barrier.
pub fn matrix(kind: GateKind, params: &[f64]) -> Option<GateMatrix> {
    let one = c(1.0, 0.0);
    let zero = c(0.0, 0.0);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let m = match kind {
        GateKind::Id => GateMatrix::diagonal(1, &[one, one]),
        GateKind::H => GateMatrix::from_rows(1, &[&[c(r, 0.0), c(r, 0.0)], &[c(r, 0.0), c(-r, 0.0)]]),
        GateKind::X => GateMatrix::permutation(1, &[1, 0]),
        GateKind::Y => GateMatrix::from_rows(1, &[&[zero, c(0.0, -1.0)], &[c(0.0, 1.0), zero]]),
        GateKind::Z => GateMatrix::diagonal(1, &[one, c(-1.0, 0.0)]),
        GateKind::S => GateMatrix::diagonal(1, &[one, c(0.0, 1.0)]),
        GateKind::Sdg => GateMatrix::diagonal(1, &[one, c(0.0, -1.0)]),
        GateKind::T => GateMatrix::diagonal(1, &[one, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]),
        GateKind::Tdg => GateMatrix::diagonal(1, &[one, Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4)]),
        GateKind::Rx => {
            let (s, co) = (params[0] / 2.0).sin_cos();
            GateMatrix::from_rows(1, &[&[c(co, 0.0), c(0.0, -s)], &[c(0.0, -s), c(co, 0.0)]])
        }
        GateKind::Ry => {
            let (s, co) = (params[0] / 2.0).sin_cos();
            GateMatrix::from_rows(1, &[&[c(co, 0.0), c(-s, 0.0)], &[c(s, 0.0), c(co, 0.0)]])
        }
        GateKind::Rz => GateMatrix::diagonal(
            1,
            &[
                Complex64::from_polar(1.0, -params[0] / 2.0),
                Complex64::from_polar(1.0, params[0] / 2.0),
            ],
        ),
        GateKind::U1 => GateMatrix::diagonal(1, &[one, Complex64::from_polar(1.0, params[0])]),
        GateKind::U2 => u3(std::f64::consts::FRAC_PI_2, params[0], params[1]),
        GateKind::U3 => u3(params[0], params[1], params[2]),
        // operand 0 is the control: flip bit 1 when bit 0 is set
        GateKind::Cx => GateMatrix::permutation(2, &[0, 3, 2, 1]),
        GateKind::Cz => GateMatrix::diagonal(2, &[one, one, one, c(-1.0, 0.0)]),
        GateKind::Swap => GateMatrix::permutation(2, &[0, 2, 1, 3]),
        GateKind::Ccx => GateMatrix::permutation(3, &[0, 1, 2, 7, 4, 5, 6, 3]),
        GateKind::Measure | GateKind::Reset | GateKind::Barrier => return None,
    };
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_unitary(m: &GateMatrix) -> bool {
        let d = m.dim();
        (0..d).all(|i| {
            (0..d).all(|j| {
                let dot: Complex64 = (0..d).map(|k| m.get(k, i).conj() * m.get(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                (dot - c(want, 0.0)).norm() < 1e-14
            })
        })
    }

    #[test]
    fn all_unitary() {
        for kind in GateKind::UNITARY {
            let params = vec![0.3, -1.1, 2.7][..kind.param_count()].to_vec();
            let m = matrix(kind, &params).unwrap();
            assert_eq!(m.arity, kind.qubit_arity().unwrap());
            assert!(is_unitary(&m), "{kind}");
        }
    }

    #[test]
    fn u2_matches_u3_half_pi() {
        let a = matrix(GateKind::U2, &[0.4, 1.3]).unwrap();
        let b = matrix(GateKind::U3, &[std::f64::consts::FRAC_PI_2, 0.4, 1.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_unitary_kinds() {
        assert!(matrix(GateKind::Measure, &[]).is_none());
        assert!(matrix(GateKind::Barrier, &[]).is_none());
    }
}
