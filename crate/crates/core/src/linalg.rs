//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Tolerance used for every semidefiniteness decision: `1e-10 * (1 + ||M||_inf)`.
pub fn tol_psd(m: &DMatrix<f64>) -> f64 {
    1e-10 * (1.0 + inf_norm(m))
}

/// Largest entry of `|M - M^T|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -tol_psd(m)
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) > tol_psd(m)
}

/// Cholesky factor of a symmetric positive definite matrix, or the smallest
/// eigenvalue when the factorization breaks down.
pub fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, f64> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| min_eigenvalue(m))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |a - b| / (1 + max |b|)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / (1.0 + max_abs(b))
}
