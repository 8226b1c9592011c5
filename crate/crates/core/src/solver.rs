//! Estimators built from a finished sketch.

use crate::error::{LessError, Result};
use crate::less::SketchAccumulator;
use crate::leverage::Preconditioner;
use crate::matrix::{
    invert_upper, lstsq_exact, pcg_normal, qr::qr_r, DenseMatrix, DenseVector, DEFAULT_PCG_TOL,
};

/// One machine's sketch-and-solve estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub x: DenseVector,
    pub cg_iters: usize,
    pub seed: u64,
}

/// `(γ·(SA)ᵀ(SA))⁻¹` with `γ = m/(m−d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaInverse {
    pub q: DenseMatrix,
    pub gamma: f64,
}

/// `m/(m−d)`, the first-order inversion bias correction.
pub fn gamma(m: usize, d: usize) -> Result<f64> {
    if m <= d {
        return Err(LessError::GammaUndefined { m, d });
    }
    Ok(m as f64 / (m - d) as f64)
}

pub fn default_max_iters(d: usize) -> usize {
    4 * d
}

/// Minimize `‖(SA)x − Sb‖²` with conjugate gradient preconditioned by `P`.
pub fn solve_sketched(
    acc: &SketchAccumulator,
    pre: &Preconditioner,
    tol: f64,
) -> Result<EstimateBundle> {
    let (m, d) = acc.sa().shape();
    if m < d {
        return Err(LessError::RankDeficient {
            index: m,
            value: 0.0,
            threshold: 0.0,
        });
    }
    let sol = pcg_normal(acc.sa(), acc.sb(), pre.p(), tol, default_max_iters(d))?;
    Ok(EstimateBundle {
        x: sol.x,
        cg_iters: sol.iterations,
        seed: acc.config().seed,
    })
}

/// Direct QR solve of the sketched problem, for sketches built without a
/// preconditioner (e.g. uniform sparsification).
pub fn solve_sketched_qr(acc: &SketchAccumulator) -> Result<EstimateBundle> {
    Ok(EstimateBundle {
        x: lstsq_exact(acc.sa(), acc.sb())?,
        cg_iters: 0,
        seed: acc.config().seed,
    })
}

/// `(γ·SᵀS-weighted Gram)⁻¹` for an explicit sketched matrix.
pub fn scaled_inverse_gram(sa: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    let r_inv = invert_upper(&qr_r(sa)?)?;
    let mut q = r_inv.matmul(&r_inv.transpose())?;
    q.scale(1.0 / gamma);
    q.symmetrize();
    Ok(q)
}

pub fn gamma_inverse_covariance(acc: &SketchAccumulator) -> Result<GammaInverse> {
    let (m, d) = acc.sa().shape();
    let g = gamma(m, d)?;
    Ok(GammaInverse {
        q: scaled_inverse_gram(acc.sa(), g)?,
        gamma: g,
    })
}

pub fn average_vectors(xs: &[DenseVector]) -> Result<DenseVector> {
    let first = xs.first().ok_or(LessError::EmptyInput)?;
    let d = first.len();
    let mut sum = vec![0.0; d];
    for x in xs {
        if x.len() != d {
            return Err(LessError::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(x.as_slice()) {
            *s += v;
        }
    }
    let inv = 1.0 / xs.len() as f64;
    DenseVector::new(sum.into_iter().map(|s| s * inv).collect())
}

/// Coordinate-wise mean of the estimates, summed in the given order.
pub fn average_estimates(bundles: &[EstimateBundle]) -> Result<DenseVector> {
    let xs: Vec<DenseVector> = bundles.iter().map(|b| b.x.clone()).collect();
    average_vectors(&xs)
}

/// Exact solution and optimal loss of a fixed problem, for evaluating many
/// estimates against it.
#[derive(Debug, Clone)]
pub struct LossOracle {
    a: DenseMatrix,
    b: DenseVector,
    x_star: DenseVector,
    loss_star: f64,
}

impl LossOracle {
    pub fn new(a: &DenseMatrix, b: &DenseVector) -> Result<Self> {
        let x_star = lstsq_exact(a, b)?;
        let loss_star = a.matvec(x_star.as_slice())?.sub(b).norm_sq();
        Ok(LossOracle {
            a: a.clone(),
            b: b.clone(),
            x_star,
            loss_star,
        })
    }

    pub fn x_star(&self) -> &DenseVector {
        &self.x_star
    }

    pub fn optimal_loss(&self) -> f64 {
        self.loss_star
    }

    /// `‖a x − b‖²`
    pub fn loss(&self, x: &DenseVector) -> Result<f64> {
        Ok(self.a.matvec(x.as_slice())?.sub(&self.b).norm_sq())
    }

    /// `‖a(x − x*)‖²`, equal to `L(x) − L(x*)` but without cancellation.
    pub fn excess_loss(&self, x: &DenseVector) -> Result<f64> {
        Ok(self.a.matvec(x.sub(&self.x_star).as_slice())?.norm_sq())
    }

    pub fn is_consistent(&self) -> bool {
        self.loss_star <= 1e-12 * self.b.norm_sq()
    }

    /// `(L(x) − L(x*))/L(x*)`.
    pub fn relative_excess_loss(&self, x: &DenseVector) -> Result<f64> {
        if self.is_consistent() {
            return Err(LessError::ConsistentSystem {
                loss: self.loss_star,
            });
        }
        Ok(self.excess_loss(x)? / self.loss_star)
    }
}

pub fn relative_excess_loss(a: &DenseMatrix, b: &DenseVector, x: &DenseVector) -> Result<f64> {
    LossOracle::new(a, b)?.relative_excess_loss(x)
}

pub fn default_tol() -> f64 {
    DEFAULT_PCG_TOL
}
