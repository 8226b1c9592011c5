//! Exact leverage scores, and single-pass estimates from a preconditioner
//! combined with a Gaussian row-norm probe.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LessError, Result};
use crate::less::{LessConfig, SketchAccumulator};
use crate::matrix::{dot, invert_upper, qr::qr_r, thin_qr, DenseMatrix};
use crate::rng::StreamKey;

pub const DEFAULT_PROBE_WIDTH: usize = 16;

/// Relative floor on approximate scores, times `d/n`.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeverageScores {
    scores: Vec<f64>,
    dim: usize,
    beta1: f64,
    beta2: f64,
    exact: bool,
}

impl LeverageScores {
    /// Wrap externally computed estimates; `β₁ = β₂ = 1` until calibrated.
    pub fn approximate(scores: Vec<f64>, dim: usize) -> Result<Self> {
        if scores.is_empty() || dim == 0 {
            return Err(LessError::EmptyInput);
        }
        if let Some(i) = scores.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(LessError::NonFinite(i));
        }
        Ok(LeverageScores {
            scores,
            dim,
            beta1: 1.0,
            beta2: 1.0,
            exact: false,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Record the empirical `β₁ = max_i l_i/l̃_i` and `β₂ = Σl̃_i/d` against
    /// exact scores (each clamped to at least 1).
    pub fn calibrated(mut self, exact: &LeverageScores) -> Result<Self> {
        if exact.len() != self.len() {
            return Err(LessError::DimensionMismatch {
                expected: exact.len(),
                found: self.len(),
            });
        }
        let b1 = exact
            .scores
            .iter()
            .zip(&self.scores)
            .map(|(l, lt)| l / lt)
            .fold(1.0, f64::max);
        self.beta1 = b1;
        self.beta2 = (self.sum() / self.dim as f64).max(1.0);
        Ok(self)
    }
}

/// Squared row norms of an orthonormal basis.
pub fn leverage_from_basis(q: &DenseMatrix) -> LeverageScores {
    LeverageScores {
        scores: q.row_iter().map(|r| dot(r, r)).collect(),
        dim: q.cols(),
        beta1: 1.0,
        beta2: 1.0,
        exact: true,
    }
}

pub fn exact_leverage_scores(a: &DenseMatrix) -> Result<LeverageScores> {
    Ok(leverage_from_basis(&thin_qr(a)?.q))
}

/// How `‖aᵀP G‖²` is evaluated.
#[derive(Debug, Clone)]
pub enum Probe {
    /// Materialized `P·G/√k`, `d × k`.
    Dense(DenseMatrix),
    /// `G` regenerated column by column from its key on every call; stores
    /// nothing but the key.
    Implicit { key: StreamKey, k: usize },
    /// Diagnostic: `G = I` with no `1/k` normalization, so scores are
    /// exactly `‖aᵀP‖²`.
    Identity,
}

#[derive(Debug, Clone)]
pub struct Preconditioner {
    p: DenseMatrix,
    probe: Probe,
    floor: f64,
}

/// Column `j` of the Gaussian probe matrix.
fn probe_column(key: &StreamKey, j: usize) -> impl Iterator<Item = f64> {
    let mut rng = key.stream(j as u64);
    std::iter::repeat_with(move || rng.sample::<f64, _>(StandardNormal))
}

impl Preconditioner {
    /// Build around a known `P` with a dense Gaussian probe of width `k`.
    pub fn new(p: DenseMatrix, n: usize, k: usize, probe_seed: u64) -> Result<Self> {
        let d = p.rows();
        if p.cols() != d {
            return Err(LessError::DimensionMismatch {
                expected: d,
                found: p.cols(),
            });
        }
        if k == 0 || n == 0 {
            return Err(LessError::InvalidConfig("probe width and row count must be positive".into()));
        }
        let key = StreamKey::new(probe_seed);
        let inv_sqrt_k = 1.0 / (k as f64).sqrt();
        let mut reduced = DenseMatrix::zeros(d, k);
        for j in 0..k {
            let g: Vec<f64> = probe_column(&key, j).take(d).collect();
            for r in 0..d {
                reduced[(r, j)] = dot(p.row(r), &g) * inv_sqrt_k;
            }
        }
        Ok(Preconditioner {
            floor: SCORE_FLOOR * d as f64 / n as f64,
            p,
            probe: Probe::Dense(reduced),
        })
    }

    /// Same `P`, but the probe is regenerated on demand instead of stored.
    /// Produces the same scores as [`Preconditioner::new`] with equal
    /// arguments, up to rounding.
    pub fn new_implicit(p: DenseMatrix, n: usize, k: usize, probe_seed: u64) -> Result<Self> {
        let d = p.rows();
        if p.cols() != d {
            return Err(LessError::DimensionMismatch {
                expected: d,
                found: p.cols(),
            });
        }
        if k == 0 || n == 0 {
            return Err(LessError::InvalidConfig("probe width and row count must be positive".into()));
        }
        Ok(Preconditioner {
            floor: SCORE_FLOOR * d as f64 / n as f64,
            p,
            probe: Probe::Implicit {
                key: StreamKey::new(probe_seed),
                k,
            },
        })
    }

    /// Diagnostic preconditioner whose scores are exactly `‖aᵀP‖²`.
    pub fn with_identity_probe(p: DenseMatrix, n: usize) -> Self {
        Preconditioner {
            floor: SCORE_FLOOR * p.rows() as f64 / n as f64,
            p,
            probe: Probe::Identity,
        }
    }

    pub fn p(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn probe(&self) -> &Probe {
        &self.probe
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// Probe width `k` (`d` for the identity probe).
    pub fn probe_width(&self) -> usize {
        match &self.probe {
            Probe::Dense(r) => r.cols(),
            Probe::Implicit { k, .. } => *k,
            Probe::Identity => self.p.rows(),
        }
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// Build `P = R⁻¹` from a single pass over the rows of `A`: sketch with
/// `embed_cfg` (a score-free mode, since no estimates exist yet), take the
/// QR of the sketch, invert `R`, and attach a width-`k` Gaussian probe.
pub fn build_preconditioner<I, R>(
    a_stream: I,
    embed_cfg: &LessConfig,
    k: usize,
    seed: u64,
) -> Result<Preconditioner>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    if embed_cfg.uses_scores() {
        return Err(LessError::InvalidConfig(
            "preconditioner sketch must use uniform sparsification".into(),
        ));
    }
    let mut rows = a_stream.into_iter().peekable();
    let d = match rows.peek() {
        Some(r) => r.as_ref().len(),
        None => return Err(LessError::EmptyInput),
    };
    let mut acc = SketchAccumulator::new(embed_cfg.clone(), d)?;
    for row in rows {
        acc.ingest_row(row.as_ref(), 0.0, 0.0)?;
    }
    let n = acc.rows_ingested();
    let r = qr_r(acc.sa())?;
    let p = invert_upper(&r)?;
    Preconditioner::new(p, n, k, seed)
}

/// Default one-pass embedding for the preconditioner: uniform
/// sparsification with enough density for about `max(8, log₂(d+1)²)`
/// nonzeros per sketch row.
pub fn preconditioner_sketch_config(n: usize, d: usize, m: usize, seed: u64) -> LessConfig {
    let log = ((d + 1) as f64).log2().ceil();
    let target = (log * log).max(8.0);
    LessConfig::uniform(m, (target / n as f64).min(1.0), seed)
}

/// `max(‖rowᵀ P G‖²/k, floor)`.
pub fn approx_leverage_score(row: &[f64], pre: &Preconditioner) -> f64 {
    let d = pre.dim();
    debug_assert_eq!(row.len(), d);
    let raw = match &pre.probe {
        Probe::Dense(reduced) => {
            let k = reduced.cols();
            let mut acc = vec![0.0; k];
            for (r, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    crate::matrix::axpy(a, reduced.row(r), &mut acc);
                }
            }
            dot(&acc, &acc)
        }
        Probe::Implicit { key, k } => {
            let t = pre.p.t_matvec(row).expect("row length matches").into_vec();
            let mut total = 0.0;
            for j in 0..*k {
                let v: f64 = t.iter().zip(probe_column(key, j)).map(|(ti, g)| ti * g).sum();
                total += v * v;
            }
            total / *k as f64
        }
        Probe::Identity => {
            let t = pre.p.t_matvec(row).expect("row length matches");
            t.norm_sq()
        }
    };
    raw.max(pre.floor)
}

/// Score every row of `a`.
pub fn approximate_scores(a: &DenseMatrix, pre: &Preconditioner) -> Result<LeverageScores> {
    LeverageScores::approximate(
        a.row_iter().map(|r| approx_leverage_score(r, pre)).collect(),
        a.cols(),
    )
}
