#![allow(dead_code)]

use qnbo::kernels::{CurvaturePair, PairHistory, QnMode};
use qnbo::linalg::DenseMatrix;
use qnbo::rng::{gaussian_vec, seeded, Rng};
use rand::Rng as _;

/// `M Mᵀ / n + shift·I`, symmetric positive definite.
pub fn random_spd(r: &mut Rng, n: usize, shift: f64) -> DenseMatrix<f64> {
    let m = DenseMatrix::from_row_major(n, n, gaussian_vec::<f64>(r, n * n)).unwrap();
    let mut a = m.matmul(&m.transpose());
    for v in a.as_mut_slice() {
        *v /= n as f64;
    }
    for i in 0..n {
        a.as_mut_slice()[i * n + i] += shift;
    }
    a.symmetrize();
    a
}

/// A history of up to `max_pairs` pairs `(s, A s)` for one SPD `A`, plus the `A`.
pub fn quadratic_history(
    seed: u64,
    n: usize,
    pairs: usize,
    mode: QnMode,
) -> (PairHistory<f64>, DenseMatrix<f64>) {
    let mut r = seeded(seed);
    let a = random_spd(&mut r, n, 0.5);
    let mut hist = PairHistory::new(n);
    for _ in 0..pairs {
        let s = gaussian_vec::<f64>(&mut r, n);
        let g = a.matvec(&s);
        hist.push_pair(CurvaturePair::new(s, g).unwrap(), mode)
            .unwrap();
    }
    (hist, a)
}

/// Pairs `(s, B_i s)` with a fresh SPD `B_i` per pair: every pair has positive
/// curvature but no single Hessian explains them all.
pub fn mixed_history(seed: u64, n: usize, pairs: usize, mode: QnMode) -> PairHistory<f64> {
    let mut r = seeded(seed);
    let mut hist = PairHistory::new(n);
    for _ in 0..pairs {
        let shift = r.random_range(0.1..2.0);
        let b = random_spd(&mut r, n, shift);
        let s = gaussian_vec::<f64>(&mut r, n);
        let g = b.matvec(&s);
        hist.push_pair(CurvaturePair::new(s, g).unwrap(), mode)
            .unwrap();
    }
    hist
}
