//! Leverage score sparsified (LESS) embeddings, sampled one data row (one
//! sketch column) at a time so the sketch `(SA, Sb)` is built in a single
//! streaming pass.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{LessError, Result};
use crate::leverage::LeverageScores;
use crate::matrix::{axpy, DenseMatrix, DenseVector};
use crate::rng::{rademacher, StreamKey};

/// Floor applied to inclusion probabilities before taking `1/√p`.
pub const MIN_PROBABILITY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchMode {
    /// `p_i = min(1, s·β₁·l̃_i / d)`.
    LeverageLess,
    /// Every row kept with the same probability, ignoring scores.
    LessUniform { density: f64 },
    /// Leverage sampling: LESS with `s = 1`, about one sample per sketch row.
    Subsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LessConfig {
    /// Sketch rows.
    pub m: usize,
    /// Sparsity parameter: expected leverage samples per sketch row before
    /// the β factors.
    pub s: f64,
    pub beta1: f64,
    pub mode: SketchMode,
    pub seed: u64,
}

impl LessConfig {
    pub fn leverage(m: usize, s: f64, seed: u64) -> Self {
        LessConfig {
            m,
            s,
            beta1: 1.0,
            mode: SketchMode::LeverageLess,
            seed,
        }
    }

    pub fn uniform(m: usize, density: f64, seed: u64) -> Self {
        LessConfig {
            m,
            s: 1.0,
            beta1: 1.0,
            mode: SketchMode::LessUniform { density },
            seed,
        }
    }

    pub fn subsample(m: usize, seed: u64) -> Self {
        LessConfig {
            m,
            s: 1.0,
            beta1: 1.0,
            mode: SketchMode::Subsample,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LessConfig { seed, ..self.clone() }
    }

    pub fn with_beta1(&self, beta1: f64) -> Self {
        LessConfig { beta1, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(LessError::InvalidConfig("sketch size m must be at least 1".into()));
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(LessError::InvalidConfig(format!("s must be positive, got {}", self.s)));
        }
        if !(self.beta1 > 0.0) || !self.beta1.is_finite() {
            return Err(LessError::InvalidConfig(format!(
                "beta1 must be positive, got {}",
                self.beta1
            )));
        }
        if let SketchMode::LessUniform { density } = self.mode {
            if !(density > 0.0 && density <= 1.0) {
                return Err(LessError::InvalidConfig(format!(
                    "uniform density must lie in (0, 1], got {density}"
                )));
            }
        }
        Ok(())
    }

    /// Whether this mode needs per-row leverage estimates.
    pub fn uses_scores(&self) -> bool {
        !matches!(self.mode, SketchMode::LessUniform { .. })
    }
}

/// Probability that a given data row contributes to a given sketch row.
pub fn inclusion_probability(score: f64, cfg: &LessConfig, d: usize) -> f64 {
    debug_assert!(score >= 0.0);
    match cfg.mode {
        SketchMode::LeverageLess => (cfg.s * cfg.beta1 * score / d as f64).min(1.0),
        SketchMode::LessUniform { density } => density,
        SketchMode::Subsample => (cfg.beta1 * score / d as f64).min(1.0),
    }
}

/// The nonzeros of one column of `S`, i.e. the sketch rows a data row lands in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SketchColumn {
    /// Strictly increasing, each `< m`.
    pub row_indices: Vec<usize>,
    /// Each `±1/(√m·√p)`.
    pub values: Vec<f64>,
}

impl SketchColumn {
    pub fn nnz(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }
}

/// Draw a column with i.i.d. entries `b·y/(√m·√p)`, `b ~ Bernoulli(p)`,
/// `y = ±1`: a Binomial count, a uniform subset of that size, then signs.
pub fn sample_column<R: Rng + ?Sized>(p: f64, m: usize, rng: &mut R) -> SketchColumn {
    let mut col = SketchColumn::default();
    sample_column_into(&mut col, p, m, rng);
    col
}

pub(crate) fn sample_column_into<R: Rng + ?Sized>(
    col: &mut SketchColumn,
    p: f64,
    m: usize,
    rng: &mut R,
) {
    col.row_indices.clear();
    col.values.clear();
    let k = if p <= 0.0 {
        0
    } else if p >= 1.0 {
        m
    } else {
        Binomial::new(m as u64, p)
            .expect("p in (0, 1)")
            .sample(rng) as usize
    };
    if k == 0 {
        return;
    }
    let scale = 1.0 / (m as f64 * p.clamp(MIN_PROBABILITY, 1.0)).sqrt();
    if k == m {
        col.row_indices.extend(0..m);
    } else {
        col.row_indices.extend(index::sample(rng, m, k));
        col.row_indices.sort_unstable();
    }
    col.values
        .extend((0..k).map(|_| scale * rademacher(rng)));
}

/// One LESS row `x ∈ Rⁿ` (without the `1/√m` sketch scaling) as sparse
/// `(index, value)` pairs: entry `i` is `b_i·y_i/√p_i`.
pub fn sample_less_row<R: Rng + ?Sized>(probs: &[f64], rng: &mut R, out: &mut Vec<(usize, f64)>) {
    out.clear();
    for (i, &p) in probs.iter().enumerate() {
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            let v = rademacher(rng) / p.clamp(MIN_PROBABILITY, 1.0).sqrt();
            out.push((i, v));
        }
    }
}

/// Streaming accumulator for `(SA, Sb)`.
///
/// Each ingested row draws its sketch column from the stream keyed by
/// `(cfg.seed, row index)`; rows are never stored.
#[derive(Debug, Clone)]
pub struct SketchAccumulator {
    sa: DenseMatrix,
    sb: DenseVector,
    rows_ingested: usize,
    cfg: LessConfig,
    key: StreamKey,
    column: SketchColumn,
    max_column_nnz: usize,
}

impl SketchAccumulator {
    pub fn new(cfg: LessConfig, d: usize) -> Result<Self> {
        cfg.validate()?;
        if d == 0 {
            return Err(LessError::EmptyInput);
        }
        Ok(SketchAccumulator {
            sa: DenseMatrix::zeros(cfg.m, d),
            sb: DenseVector::zeros(cfg.m),
            rows_ingested: 0,
            key: StreamKey::new(cfg.seed),
            cfg,
            column: SketchColumn::default(),
            max_column_nnz: 0,
        })
    }

    /// Ingest data row `(a_i, b_i)` with (approximate) leverage score `score`.
    pub fn ingest_row(&mut self, a_i: &[f64], b_i: f64, score: f64) -> Result<()> {
        let p = inclusion_probability(score, &self.cfg, self.sa.cols());
        self.ingest_row_with_probability(a_i, b_i, p)
    }

    pub fn ingest_row_with_probability(&mut self, a_i: &[f64], b_i: f64, p: f64) -> Result<()> {
        let d = self.sa.cols();
        if a_i.len() != d {
            return Err(LessError::DimensionMismatch {
                expected: d,
                found: a_i.len(),
            });
        }
        if let Some(j) = a_i.iter().position(|v| !v.is_finite()) {
            return Err(LessError::NonFinite(j));
        }
        if !b_i.is_finite() {
            return Err(LessError::NonFinite(d));
        }
        let mut rng = self.key.stream(self.rows_ingested as u64);
        sample_column_into(&mut self.column, p, self.cfg.m, &mut rng);
        for (&j, &v) in self.column.row_indices.iter().zip(&self.column.values) {
            axpy(v, a_i, self.sa.row_mut(j));
            self.sb[j] += v * b_i;
        }
        self.max_column_nnz = self.max_column_nnz.max(self.column.nnz());
        self.rows_ingested += 1;
        Ok(())
    }

    /// Ingest every row of `(a, b)` with the given per-row scores.
    pub fn ingest_all(&mut self, a: &DenseMatrix, b: &DenseVector, scores: &[f64]) -> Result<()> {
        if b.len() != a.rows() || scores.len() != a.rows() {
            return Err(LessError::DimensionMismatch {
                expected: a.rows(),
                found: b.len().min(scores.len()),
            });
        }
        for (i, row) in a.row_iter().enumerate() {
            self.ingest_row(row, b[i], scores[i])?;
        }
        Ok(())
    }

    pub fn sa(&self) -> &DenseMatrix {
        &self.sa
    }

    pub fn sb(&self) -> &DenseVector {
        &self.sb
    }

    pub fn rows_ingested(&self) -> usize {
        self.rows_ingested
    }

    pub fn config(&self) -> &LessConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.sa.cols()
    }

    /// Largest sketch column seen so far (transient buffer size).
    pub fn max_column_nnz(&self) -> usize {
        self.max_column_nnz
    }

    pub fn into_parts(self) -> (DenseMatrix, DenseVector) {
        (self.sa, self.sb)
    }
}

/// `Σ_i p_i`: the exact expected number of nonzeros in one sketch row.
pub fn expected_nnz_per_sketch_row(cfg: &LessConfig, scores: &LeverageScores) -> f64 {
    scores
        .scores()
        .iter()
        .map(|&l| inclusion_probability(l, cfg, scores.dim()))
        .sum()
}
