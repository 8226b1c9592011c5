//! Eigen/singular value routines, backed by nalgebra. Used as oracles and in
//! the verification harness; nothing on the sketching hot path calls these.

use nalgebra::DMatrix;

use super::DenseMatrix;

fn to_nalgebra(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols(), "symmetric eigenvalues need a square matrix");
    let mut ev: Vec<f64> = to_nalgebra(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn spectral_norm_sym(a: &DenseMatrix) -> f64 {
    sym_eigenvalues(a).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Singular values in descending order.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = to_nalgebra(a).singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn condition_number(a: &DenseMatrix) -> f64 {
    let sv = singular_values(a);
    let smin = sv[sv.len().min(a.cols()) - 1];
    if smin == 0.0 {
        f64::INFINITY
    } else {
        sv[0] / smin
    }
}
