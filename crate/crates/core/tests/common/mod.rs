//! Helpers shared by the integration tests: an independent dense-matrix
//! simulator, a random small-circuit generator and the QASM corpus.

#![allow(dead_code)]

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::PathBuf;

use num_complex::Complex64 as C;
use qfw_core::bench::{ghz, random_circuit};
use qfw_core::qasm::{emit, Circuit, GateKind, Instruction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Matrix = Vec<Vec<C>>;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn identity(dim: usize) -> Matrix {
    (0..dim)
        .map(|r| {
            (0..dim)
                .map(|k| if r == k { c(1.0, 0.0) } else { c(0.0, 0.0) })
                .collect()
        })
        .collect()
}

fn u3(theta: f64, phi: f64, lambda: f64) -> Matrix {
    let (s, co) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    vec![
        vec![c(co, 0.0), -C::from_polar(s, lambda)],
        vec![C::from_polar(s, phi), C::from_polar(co, phi + lambda)],
    ]
}

/// Textbook matrix with the first operand as the most significant bit.
fn textbook(kind: GateKind, p: &[f64]) -> Matrix {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let h = FRAC_1_SQRT_2;
    match kind {
        GateKind::Id => identity(2),
        GateKind::H => vec![vec![c(h, 0.0), c(h, 0.0)], vec![c(h, 0.0), c(-h, 0.0)]],
        GateKind::X => vec![vec![z, o], vec![o, z]],
        GateKind::Y => vec![vec![z, c(0.0, -1.0)], vec![c(0.0, 1.0), z]],
        GateKind::Z => vec![vec![o, z], vec![z, -o]],
        GateKind::S => vec![vec![o, z], vec![z, c(0.0, 1.0)]],
        GateKind::Sdg => vec![vec![o, z], vec![z, c(0.0, -1.0)]],
        GateKind::T => vec![vec![o, z], vec![z, c(h, h)]],
        GateKind::Tdg => vec![vec![o, z], vec![z, c(h, -h)]],
        GateKind::Rx => {
            let (s, co) = ((p[0] / 2.0).sin(), (p[0] / 2.0).cos());
            vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
        }
        GateKind::Ry => {
            let (s, co) = ((p[0] / 2.0).sin(), (p[0] / 2.0).cos());
            vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]]
        }
        GateKind::Rz => vec![
            vec![C::from_polar(1.0, -p[0] / 2.0), z],
            vec![z, C::from_polar(1.0, p[0] / 2.0)],
        ],
        GateKind::U1 => vec![vec![o, z], vec![z, C::from_polar(1.0, p[0])]],
        GateKind::U2 => u3(std::f64::consts::FRAC_PI_2, p[0], p[1]),
        GateKind::U3 => u3(p[0], p[1], p[2]),
        GateKind::Cx => {
            let mut m = identity(4);
            m.swap(2, 3);
            m
        }
        GateKind::Cz => {
            let mut m = identity(4);
            m[3][3] = -o;
            m
        }
        GateKind::Swap => {
            let mut m = identity(4);
            m.swap(1, 2);
            m
        }
        GateKind::Ccx => {
            let mut m = identity(8);
            m.swap(6, 7);
            m
        }
        other => panic!("{other:?} has no matrix"),
    }
}

/// Lift a gate on `qubits` to the full 2^n space. Qubit 0 is the least
/// significant bit of a basis index.
fn lift(instr: &Instruction, n: usize) -> Matrix {
    let g = textbook(instr.kind, &instr.params);
    let k = instr.qubits.len();
    let dim = 1usize << n;
    let op_mask: usize = instr.qubits.iter().map(|q| 1 << q).sum();
    let local = |idx: usize| -> usize {
        instr
            .qubits
            .iter()
            .enumerate()
            .map(|(j, &q)| ((idx >> q) & 1) << (k - 1 - j))
            .sum()
    };
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for (r, row) in m.iter_mut().enumerate() {
        for (col, cell) in row.iter_mut().enumerate() {
            if r & !op_mask == col & !op_mask {
                *cell = g[local(r)][local(col)];
            }
        }
    }
    m
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![c(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == c(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Final state of a measurement-free circuit from the product of full-size
/// unitaries applied to |0...0>.
pub fn dense_oracle(circuit: &Circuit) -> Vec<C> {
    let n = circuit.num_qubits;
    let mut u = identity(1 << n);
    for instr in &circuit.instructions {
        if instr.kind == GateKind::Barrier {
            continue;
        }
        u = matmul(&lift(instr, n), &u);
    }
    u.iter().map(|row| row[0]).collect()
}

pub fn max_amplitude_diff(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Up to 3 qubits and up to 20 gates drawn uniformly from every unitary kind
/// that fits.
pub fn small_random_circuit(seed: u64) -> Circuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let gates = rng.random_range(1..=20usize);
    let kinds: Vec<GateKind> = GateKind::UNITARY
        .iter()
        .copied()
        .filter(|k| k.qubit_arity().is_some_and(|a| a <= n))
        .collect();
    let mut circ = Circuit::new(format!("small{seed}"), n, 0);
    for _ in 0..gates {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let arity = kind.qubit_arity().unwrap();
        let mut qubits: Vec<usize> = (0..n).collect();
        for i in 0..arity {
            let j = rng.random_range(i..n);
            qubits.swap(i, j);
        }
        qubits.truncate(arity);
        let params: Vec<f64> = (0..kind.param_count()).map(|_| rng.random_range(-7.0..7.0)).collect();
        circ.push(Instruction::gate(kind, &qubits, &params));
    }
    circ
}

pub fn with_measurements(mut circuit: Circuit) -> Circuit {
    circuit.num_clbits = circuit.num_qubits;
    for q in 0..circuit.num_qubits {
        circuit.measure(q, q);
    }
    circuit
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

/// Hand-written programs plus GHZ(1..=20) and 12 generated random circuits.
pub fn corpus() -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "qasm"))
        .collect();
    files.sort();
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, std::fs::read_to_string(&f).unwrap()));
    }
    for n in 1..=20 {
        out.push((format!("ghz{n}"), emit(&ghz(n).unwrap())));
    }
    for seed in 0..12u64 {
        let n = 1 + (seed as usize % 8);
        let c = with_measurements(random_circuit(n, 6, seed).unwrap());
        out.push((format!("random{seed}"), emit(&c)));
    }
    out
}

/// Binomial 5-sigma half-width for a fair coin over `shots` trials.
pub fn five_sigma(shots: u64) -> f64 {
    5.0 * (shots as f64 * 0.25).sqrt()
}

/// A live server on an ephemeral port, stopped when dropped.
pub struct TestServer {
    pub addr: std::net::SocketAddr,
    rt: Option<tokio::runtime::Runtime>,
    handle: Option<qfw_core::service::ServerHandle>,
}

impl TestServer {
    pub fn start(mut config: qfw_core::service::ServeConfig) -> Self {
        config.port = 0;
        config.grace = std::time::Duration::from_secs(5);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let handle = rt.block_on(qfw_core::service::serve(config)).expect("server starts");
        TestServer {
            addr: handle.local_addr(),
            rt: Some(rt),
            handle: Some(handle),
        }
    }

    pub fn client(&self) -> qfw_core::service::Client {
        qfw_core::service::Client::connect(self.addr).expect("connect")
    }

    pub fn service(&self) -> &std::sync::Arc<qfw_core::service::Service> {
        self.handle.as_ref().unwrap().service()
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let (Some(rt), Some(handle)) = (self.rt.take(), self.handle.take()) {
            rt.block_on(handle.shutdown());
            rt.shutdown_timeout(std::time::Duration::from_secs(1));
        }
    }
}
