//! Seeded synthetic least squares problems.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{LessError, Result};
use crate::matrix::{thin_qr, DenseMatrix, DenseVector};
use crate::rng::{derive_seed, gaussian_matrix, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub noise_sigma: f64,
    /// Ratio of largest to smallest singular value (geometric spacing).
    pub cond: f64,
    pub seed: u64,
    /// Scale each row by `|t_ν|` with this many degrees of freedom, making
    /// leverage scores heavy-tailed. `None` keeps Haar-uniform rows.
    pub row_tail: Option<f64>,
}

impl SynthSpec {
    pub fn new(n: usize, d: usize) -> Self {
        SynthSpec {
            n,
            d,
            noise_sigma: 0.1,
            cond: 10.0,
            seed: 0,
            row_tail: None,
        }
    }

    pub fn noise(self, noise_sigma: f64) -> Self {
        SynthSpec { noise_sigma, ..self }
    }

    pub fn cond(self, cond: f64) -> Self {
        SynthSpec { cond, ..self }
    }

    pub fn seed(self, seed: u64) -> Self {
        SynthSpec { seed, ..self }
    }

    pub fn row_tail(self, dof: f64) -> Self {
        SynthSpec {
            row_tail: Some(dof),
            ..self
        }
    }

    pub fn generate(&self) -> Result<SyntheticProblem> {
        synth_with(self)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub a: DenseMatrix,
    pub b: DenseVector,
    pub x_true: DenseVector,
}

/// `A = L·diag(σ)·Rᵀ` with Haar factors and singular values spaced
/// geometrically from 1 down to `1/cond`; `b = A·x_true + noise_sigma·ε`.
pub fn synth_problem(
    n: usize,
    d: usize,
    noise_sigma: f64,
    cond: f64,
    seed: u64,
) -> Result<SyntheticProblem> {
    synth_with(&SynthSpec {
        n,
        d,
        noise_sigma,
        cond,
        seed,
        row_tail: None,
    })
}

fn synth_with(spec: &SynthSpec) -> Result<SyntheticProblem> {
    let SynthSpec {
        n,
        d,
        noise_sigma,
        cond,
        seed,
        row_tail,
    } = *spec;
    if d == 0 || n <= d {
        return Err(LessError::InvalidConfig(format!("need n > d >= 1, got n = {n}, d = {d}")));
    }
    if !(cond >= 1.0) || !cond.is_finite() {
        return Err(LessError::InvalidConfig(format!("cond must be >= 1, got {cond}")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(LessError::InvalidConfig(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let left = thin_qr(&gaussian_matrix(n, d, derive_seed(seed, &[1])))?.q;
    let right = thin_qr(&gaussian_matrix(d, d, derive_seed(seed, &[2])))?.q;
    let sv: Vec<f64> = (0..d)
        .map(|j| {
            if d == 1 {
                1.0
            } else {
                cond.powf(-(j as f64) / (d - 1) as f64)
            }
        })
        .collect();
    let mut ls = left;
    for i in 0..n {
        for (v, s) in ls.row_mut(i).iter_mut().zip(&sv) {
            *v *= s;
        }
    }
    let mut a = ls.matmul(&right.transpose())?;

    if let Some(dof) = row_tail {
        let t = StudentT::new(dof)
            .map_err(|e| LessError::InvalidConfig(format!("row_tail: {e}")))?;
        let mut rng = rng_from_seed(derive_seed(seed, &[3]));
        for i in 0..n {
            let w: f64 = t.sample(&mut rng);
            a.row_mut(i).iter_mut().for_each(|v| *v *= w.abs());
        }
    }

    let mut rng = rng_from_seed(derive_seed(seed, &[4]));
    let x_true = DenseVector::new((0..d).map(|_| rng.sample(StandardNormal)).collect())?;
    let mut b = a.matvec(x_true.as_slice())?;
    for v in b.as_mut_slice() {
        *v += noise_sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(SyntheticProblem {
        a: DenseMatrix::from_row_major(n, d, a.into_vec())?,
        b: DenseVector::new(b.into_vec())?,
        x_true,
    })
}

/// Scale every column to unit Euclidean norm; returns the original norms.
/// All-zero columns are left alone.
pub fn standardize_columns(a: &mut DenseMatrix) -> Vec<f64> {
    let d = a.cols();
    let mut norms = vec![0.0; d];
    for row in a.row_iter() {
        for (s, v) in norms.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    norms.iter_mut().for_each(|s| *s = s.sqrt());
    for i in 0..a.rows() {
        for (v, &s) in a.row_mut(i).iter_mut().zip(&norms) {
            if s > 0.0 {
                *v /= s;
            }
        }
    }
    norms
}
