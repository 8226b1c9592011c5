use super::{axpy, dot, norm, DenseMatrix, DenseVector};
use crate::error::{LessError, Result};

pub const DEFAULT_PCG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcgSolution {
    pub x: DenseVector,
    pub iterations: usize,
    /// Relative normal-equation residual `‖aᵀ(ax − b)‖ / ‖aᵀb‖`.
    pub residual: f64,
}

/// `aᵀ a w`, one row at a time so no length-`m` temporary is needed.
fn normal_apply(a: &DenseMatrix, w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in a.row_iter() {
        let t = dot(row, w);
        if t != 0.0 {
            axpy(t, row, out);
        }
    }
}

fn true_gradient(a: &DenseMatrix, c: &[f64], x: &[f64], out: &mut [f64]) {
    normal_apply(a, x, out);
    for (o, ci) in out.iter_mut().zip(c) {
        *o = ci - *o;
    }
}

/// Conjugate gradient on the normal equations `aᵀa x = aᵀb`, run in the
/// preconditioned variable `y` with `x = precond · y`.
///
/// Stops once `‖aᵀ(ax − b)‖ ≤ tol · ‖aᵀb‖`. Hitting `max_iters` yields
/// [`LessError::NotConverged`] carrying the last iterate.
pub fn pcg_normal(
    a: &DenseMatrix,
    b: &DenseVector,
    precond: &DenseMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<PcgSolution> {
    let m = a.rows();
    if b.len() != m {
        return Err(LessError::DimensionMismatch {
            expected: m,
            found: b.len(),
        });
    }
    let c = a.t_matvec(b.as_slice())?;
    pcg_normal_rhs(a, &c, precond, tol, max_iters)
}

/// [`pcg_normal`] given the reduced right-hand side `c = aᵀb` instead of `b`.
pub fn pcg_normal_rhs(
    a: &DenseMatrix,
    c: &DenseVector,
    precond: &DenseMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<PcgSolution> {
    let d = a.cols();
    if c.len() != d {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: c.len(),
        });
    }
    if precond.shape() != (d, d) {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: precond.rows(),
        });
    }
    if !(tol > 0.0) {
        return Err(LessError::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }

    let c = c.as_slice();
    let c_norm = norm(c);
    let mut x = vec![0.0; d];
    if c_norm == 0.0 {
        return Ok(PcgSolution {
            x: DenseVector::from_vec_unchecked(x),
            iterations: 0,
            residual: 0.0,
        });
    }
    let curvature_floor = 1e-28 * a.frobenius_norm().powi(2);

    let mut g = c.to_vec();
    let mut r = precond.t_matvec(&g)?.into_vec();
    let mut dir = r.clone();
    let mut rr = dot(&r, &r);
    let mut hw = vec![0.0; d];
    let mut rel = 1.0;

    for it in 1..=max_iters {
        let w = precond.matvec(&dir)?.into_vec();
        normal_apply(a, &w, &mut hw);
        let curv = dot(&w, &hw);
        if !(curv > curvature_floor * dot(&w, &w)) {
            return Err(LessError::RankDeficient {
                index: it - 1,
                value: curv.max(0.0),
                threshold: curvature_floor,
            });
        }
        let alpha = rr / curv;
        axpy(alpha, &w, &mut x);
        axpy(-alpha, &hw, &mut g);
        rel = norm(&g) / c_norm;
        if rel <= tol {
            // The recurrence drifts; confirm against the true gradient.
            true_gradient(a, c, &x, &mut g);
            rel = norm(&g) / c_norm;
            if rel <= tol {
                return Ok(PcgSolution {
                    x: DenseVector::new(x)?,
                    iterations: it,
                    residual: rel,
                });
            }
            r = precond.t_matvec(&g)?.into_vec();
            rr = dot(&r, &r);
            dir.copy_from_slice(&r);
            continue;
        }
        r = precond.t_matvec(&g)?.into_vec();
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (di, ri) in dir.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rr = rr_new;
    }
    Err(LessError::NotConverged {
        iterations: max_iters,
        residual: rel,
        iterate: DenseVector::from_vec_unchecked(x),
    })
}
