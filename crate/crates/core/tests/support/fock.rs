//! Second moments of two-mode states computed in a truncated Fock basis.
//! Shared by the engine oracle tests and the acceptance suite.

#![allow(dead_code)]

use cvqkd_core::gaussian::{GaussianState, SymplecticOp};
use num_complex::Complex64;

const CUTOFF: usize = 40;
// Room for two raising operators above the cutoff.
const DIM: usize = CUTOFF + 3;

type Amplitudes = Vec<Vec<Complex64>>;

fn zeros() -> Amplitudes {
    vec![vec![Complex64::new(0.0, 0.0); DIM]; DIM]
}

/// `Σ_n c_n |n, n⟩` with `c_n = (phase · tanh r)^n / cosh r`, `n ≤ 40`.
pub fn paired_state(r: f64, phase: Complex64) -> Amplitudes {
    let mut psi = zeros();
    let mut c = Complex64::new(1.0 / r.cosh(), 0.0);
    for n in 0..=CUTOFF {
        psi[n][n] = c;
        c *= phase * r.tanh();
    }
    psi
}

fn lower(psi: &Amplitudes, mode: usize) -> Amplitudes {
    let mut out = zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            let (n, src) = if mode == 0 { (i + 1, (i + 1, j)) } else { (j + 1, (i, j + 1)) };
            if n < DIM {
                out[i][j] = psi[src.0][src.1] * (n as f64).sqrt();
            }
        }
    }
    out
}

fn raise(psi: &Amplitudes, mode: usize) -> Amplitudes {
    let mut out = zeros();
    for i in 0..DIM {
        for j in 0..DIM {
            let target = if mode == 0 { (i + 1, j) } else { (i, j + 1) };
            let n = if mode == 0 { i + 1 } else { j + 1 };
            if target.0 < DIM && target.1 < DIM {
                out[target.0][target.1] = psi[i][j] * (n as f64).sqrt();
            }
        }
    }
    out
}

fn axpy(a: &Amplitudes, wa: Complex64, b: &Amplitudes, wb: Complex64) -> Amplitudes {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| wa * x + wb * y).collect())
        .collect()
}

/// Applies quadrature `k` (X1, P1, X2, P2) to `psi`.
fn apply_quadrature(psi: &Amplitudes, k: usize) -> Amplitudes {
    let mode = k / 2;
    let (lo, hi) = (lower(psi, mode), raise(psi, mode));
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    if k % 2 == 0 {
        axpy(&lo, one, &hi, one)
    } else {
        // (a − a†)/i
        axpy(&lo, -i, &hi, i)
    }
}

fn inner(a: &Amplitudes, b: &Amplitudes) -> Complex64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.conj() * y))
        .sum()
}

/// Symmetrized second moments `Re⟨R_i R_j⟩`; first moments vanish here.
pub fn fock_covariance(psi: &Amplitudes) -> [[f64; 4]; 4] {
    let applied: Vec<Amplitudes> = (0..4).map(|k| apply_quadrature(psi, k)).collect();
    let mut cov = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            cov[i][j] = inner(&applied[i], &applied[j]).re;
        }
    }
    cov
}

/// Largest entry-wise deviation between Fock moments and the engine state
/// obtained by applying `op` to two vacua.
pub fn max_deviation(fock: &[[f64; 4]; 4], op: &SymplecticOp) -> f64 {
    let state = GaussianState::vacuum(2).unwrap().apply(op).unwrap();
    let mut worst = 0.0f64;
    for (i, row) in fock.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - state.cov()[(i, j)]).abs());
        }
    }
    worst
}
