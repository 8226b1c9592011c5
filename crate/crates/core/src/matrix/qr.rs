use super::{dot, DenseMatrix, DenseVector};
use crate::error::{LessError, Result};

/// Diagonal entries of R at or below `RANK_TOL * ‖A‖_F` are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factors with `Q` having orthonormal columns and `R` upper
/// triangular with a non-negative diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Householder reflectors stored below the diagonal of a working copy.
struct Householder {
    work: DenseMatrix,
    /// `vs[k]` has length `n - k`.
    vs: Vec<Vec<f64>>,
    taus: Vec<f64>,
}

impl Householder {
    /// Factor in place. With `keep = false` each reflector is dropped once
    /// applied, so only `R` (in `work`) survives.
    fn factor(mut work: DenseMatrix, keep: bool) -> Self {
        let (n, d) = work.shape();
        let mut vs = Vec::with_capacity(if keep { d } else { 0 });
        let mut taus = Vec::with_capacity(d);
        for k in 0..d {
            let mut v: Vec<f64> = (k..n).map(|i| work[(i, k)]).collect();
            let norm_x = dot(&v, &v).sqrt();
            if norm_x == 0.0 {
                if keep {
                    vs.push(v);
                }
                taus.push(0.0);
                continue;
            }
            let alpha = if v[0] >= 0.0 { -norm_x } else { norm_x };
            v[0] -= alpha;
            let vnorm_sq = dot(&v, &v);
            let tau = if vnorm_sq > 0.0 { 2.0 / vnorm_sq } else { 0.0 };
            for j in k..d {
                let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * work[(k + i, j)]).sum();
                if s == 0.0 {
                    continue;
                }
                let ts = tau * s;
                for (i, vi) in v.iter().enumerate() {
                    work[(k + i, j)] -= ts * vi;
                }
            }
            if keep {
                vs.push(v);
            }
            taus.push(tau);
        }
        Householder { work, vs, taus }
    }

    fn diag_signs(&self) -> Vec<f64> {
        (0..self.work.cols())
            .map(|k| if self.work[(k, k)] < 0.0 { -1.0 } else { 1.0 })
            .collect()
    }

    fn check_rank(&self, fro: f64) -> Result<()> {
        let threshold = RANK_TOL * fro;
        for k in 0..self.work.cols() {
            let value = self.work[(k, k)].abs();
            if value <= threshold {
                return Err(LessError::RankDeficient {
                    index: k,
                    value,
                    threshold,
                });
            }
        }
        Ok(())
    }

    fn r(&self) -> DenseMatrix {
        let d = self.work.cols();
        let signs = self.diag_signs();
        DenseMatrix::from_fn(d, d, |i, j| {
            if j >= i {
                signs[i] * self.work[(i, j)]
            } else {
                0.0
            }
        })
    }

    fn q(&self) -> DenseMatrix {
        let (n, d) = self.work.shape();
        let mut q = DenseMatrix::zeros(n, d);
        for k in 0..d {
            q[(k, k)] = 1.0;
        }
        for k in (0..d).rev() {
            let (v, tau) = (&self.vs[k], self.taus[k]);
            if tau == 0.0 {
                continue;
            }
            for j in k..d {
                let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * q[(k + i, j)]).sum();
                let ts = tau * s;
                for (i, vi) in v.iter().enumerate() {
                    q[(k + i, j)] -= ts * vi;
                }
            }
        }
        let signs = self.diag_signs();
        for i in 0..n {
            for (j, s) in signs.iter().enumerate() {
                q[(i, j)] *= s;
            }
        }
        q
    }

    /// First `d` entries of `Qᵀ b`, consistent with the sign-normalized `Q`.
    fn qt_apply(&self, b: &[f64]) -> Vec<f64> {
        let d = self.work.cols();
        let mut y = b.to_vec();
        for k in 0..d {
            let (v, tau) = (&self.vs[k], self.taus[k]);
            let s = dot(v, &y[k..]);
            for (i, vi) in v.iter().enumerate() {
                y[k + i] -= tau * s * vi;
            }
        }
        y.truncate(d);
        for (yi, s) in y.iter_mut().zip(self.diag_signs()) {
            *yi *= s;
        }
        y
    }
}

/// Householder thin QR of a tall matrix.
pub fn thin_qr(a: &DenseMatrix) -> Result<QrFactors> {
    let (n, d) = a.shape();
    if n < d {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: n,
        });
    }
    let h = Householder::factor(a.clone(), true);
    h.check_rank(a.frobenius_norm())?;
    Ok(QrFactors { q: h.q(), r: h.r() })
}

/// Only the triangular factor; skips forming `Q`.
pub(crate) fn qr_r(a: &DenseMatrix) -> Result<DenseMatrix> {
    qr_r_owned(a.clone())
}

/// [`qr_r`] consuming its input: the factorization overwrites `a` and at
/// most one reflector (`≤ rows` words) is alive beside it.
pub fn qr_r_owned(a: DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = a.shape();
    let fro = a.frobenius_norm();
    if n < d {
        return Err(LessError::RankDeficient {
            index: n,
            value: 0.0,
            threshold: RANK_TOL * fro,
        });
    }
    let h = Householder::factor(a, false);
    h.check_rank(fro)?;
    Ok(h.r())
}

/// Minimizer of `‖a x − b‖²` via Householder QR.
pub fn lstsq_exact(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    let (n, d) = a.shape();
    if b.len() != n {
        return Err(LessError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    if n < d {
        return Err(LessError::RankDeficient {
            index: n,
            value: 0.0,
            threshold: RANK_TOL * a.frobenius_norm(),
        });
    }
    let h = Householder::factor(a.clone(), true);
    h.check_rank(a.frobenius_norm())?;
    let y = h.qt_apply(b.as_slice());
    solve_upper(&h.r(), &y)
}

/// Back substitution for `r x = y`.
pub fn solve_upper(r: &DenseMatrix, y: &[f64]) -> Result<DenseVector> {
    let d = r.rows();
    if r.cols() != d || y.len() != d {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: y.len(),
        });
    }
    let mut x = y.to_vec();
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|j| r[(i, j)] * x[j]).sum();
        let rii = r[(i, i)];
        if rii == 0.0 {
            return Err(LessError::RankDeficient {
                index: i,
                value: 0.0,
                threshold: 0.0,
            });
        }
        x[i] = (x[i] - s) / rii;
    }
    DenseVector::new(x)
}

/// Inverse of an upper-triangular matrix (itself upper triangular).
pub fn invert_upper(r: &DenseMatrix) -> Result<DenseMatrix> {
    let d = r.rows();
    if r.cols() != d {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: r.cols(),
        });
    }
    let mut inv = DenseMatrix::zeros(d, d);
    for j in 0..d {
        if r[(j, j)] == 0.0 {
            return Err(LessError::RankDeficient {
                index: j,
                value: 0.0,
                threshold: 0.0,
            });
        }
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r[(i, k)] * inv[(k, j)]).sum();
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    if !inv.is_finite() {
        return Err(LessError::NonFinite(0));
    }
    Ok(inv)
}
