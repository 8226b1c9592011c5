//! Distributed averaging experiment: for several `(m, nnz)` sketch shapes
//! sharing one budget `m·nnz`, average `q` independent sketch-and-solve
//! estimates and record the relative excess loss as `q` grows.

use std::io::Write;

use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use less_core::distributed::worker_pool;
use less_core::leverage::{
    approximate_scores, build_preconditioner, preconditioner_sketch_config, DEFAULT_PROBE_WIDTH,
};
use less_core::matrix::lstsq_exact;
use less_core::rng::derive_seed;
use less_core::solver::{average_vectors, LossOracle};
use less_core::{DenseMatrix, DenseVector, LessConfig, LessError, SketchAccumulator};

use crate::error::CliError;

pub const CSV_HEADER: [&str; 8] = ["config_id", "m", "nnz", "q", "mean_rel_err", "stderr", "repeats", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Leverage score sparsification, `s = nnz`.
    Less,
    /// Uniform sparsification with density `nnz/n`.
    Lessuniform,
    /// Leverage score sampling (`nnz` ignored).
    Subsample,
}

impl Mode {
    pub fn config(self, m: usize, nnz: usize, n: usize, seed: u64) -> LessConfig {
        match self {
            Mode::Less => LessConfig::leverage(m, nnz as f64, seed),
            Mode::Lessuniform => LessConfig::uniform(m, (nnz as f64 / n as f64).min(1.0), seed),
            Mode::Subsample => LessConfig::subsample(m, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchShape {
    pub m: usize,
    /// Target nonzeros per sketch row.
    pub nnz: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub q_grid: Vec<usize>,
    pub configs: Vec<SketchShape>,
    pub repeats: usize,
    pub mode: Mode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub config_id: usize,
    pub m: usize,
    pub nnz: usize,
    pub q: usize,
    pub mean_rel_err: f64,
    pub stderr: f64,
    pub repeats: usize,
    pub seed: u64,
}

/// `count` shapes with `nnz = 2, 4, 8, …` and `m = budget/nnz`, largest `m`
/// first.
pub fn default_configs(budget: usize, count: usize) -> Result<Vec<SketchShape>, CliError> {
    if count == 0 {
        return Err(CliError::Usage("need at least one configuration".into()));
    }
    (0..count)
        .map(|j| {
            let nnz = 2usize << j;
            if !budget.is_multiple_of(nnz) || budget / nnz == 0 {
                return Err(CliError::Usage(format!(
                    "budget {budget} is not a positive multiple of nnz = {nnz}"
                )));
            }
            Ok(SketchShape { m: budget / nnz, nnz })
        })
        .collect()
}

/// Powers of 4 up to `qmax`, plus `qmax` itself.
pub fn default_q_grid(qmax: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |q| q.checked_mul(4))
        .take_while(|&q| q <= qmax)
        .collect();
    if grid.last() != Some(&qmax) && qmax > 0 {
        grid.push(qmax);
    }
    grid
}

impl ExperimentConfig {
    /// Grid non-empty and strictly ascending, every `m > d`, and every
    /// shape charged the same `m·nnz`.
    pub fn validate(&self, d: usize) -> Result<(), CliError> {
        if self.q_grid.is_empty() || self.q_grid[0] == 0 {
            return Err(CliError::Usage("q grid must be non-empty and positive".into()));
        }
        if self.q_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("q grid must be strictly ascending".into()));
        }
        if self.repeats == 0 {
            return Err(CliError::Usage("repeats must be positive".into()));
        }
        let first = self.configs.first().ok_or_else(|| CliError::Usage("no configurations".into()))?;
        let budget = first.m * first.nnz;
        for c in &self.configs {
            if c.m <= d {
                return Err(CliError::Usage(format!("sketch size m = {} must exceed d = {d}", c.m)));
            }
            if c.m * c.nnz != budget {
                return Err(CliError::Usage(format!(
                    "configuration (m = {}, nnz = {}) costs {} but the budget is {budget}",
                    c.m,
                    c.nnz,
                    c.m * c.nnz
                )));
            }
        }
        Ok(())
    }

    /// The grid with `q = 1` added if missing.
    fn reported_qs(&self) -> Vec<usize> {
        let mut qs = self.q_grid.clone();
        if qs.first() != Some(&1) {
            qs.insert(0, 1);
        }
        qs
    }
}

/// Per-row scores for `cfg`: approximate leverage from a fresh pass-1
/// preconditioner when the mode uses them, zeros otherwise.
pub fn scores_for(a: &DenseMatrix, cfg: &LessConfig, seed: u64) -> Result<Vec<f64>, LessError> {
    if !cfg.uses_scores() {
        return Ok(vec![0.0; a.rows()]);
    }
    let (n, d) = a.shape();
    let embed = preconditioner_sketch_config(n, d, cfg.m.max(2 * d), derive_seed(seed, &[0]));
    let pre = build_preconditioner(a.row_iter(), &embed, DEFAULT_PROBE_WIDTH, derive_seed(seed, &[1]))?;
    Ok(approximate_scores(a, &pre)?.scores().to_vec())
}

fn machine_estimate(
    a: &DenseMatrix,
    b: &DenseVector,
    scores: &[f64],
    cfg: &LessConfig,
) -> Result<DenseVector, LessError> {
    let mut acc = SketchAccumulator::new(cfg.clone(), a.cols())?;
    acc.ingest_all(a, b, scores)?;
    lstsq_exact(acc.sa(), acc.sb())
}

/// Relative errors of the running averages at each `q`, for one repeat.
fn one_repeat(
    a: &DenseMatrix,
    b: &DenseVector,
    oracle: &LossOracle,
    base: &LessConfig,
    qs: &[usize],
    seed: u64,
) -> Result<Vec<f64>, LessError> {
    let scores = scores_for(a, base, seed)?;
    let qmax = *qs.last().expect("non-empty grid");
    let estimates: Vec<DenseVector> = (0..qmax)
        .into_par_iter()
        .map(|j| {
            let cfg = base.with_seed(derive_seed(seed, &[2, j as u64]));
            machine_estimate(a, b, &scores, &cfg).map_err(|cause| LessError::MachineFailed {
                id: j,
                cause: Box::new(cause),
            })
        })
        .collect::<Result<_, _>>()?;
    qs.iter()
        .map(|&q| oracle.relative_excess_loss(&average_vectors(&estimates[..q])?))
        .collect()
}

/// Run every configuration and return the rows in `(config, q)` order.
pub fn experiment_averaging(
    a: &DenseMatrix,
    b: &DenseVector,
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentRow>, CliError> {
    let (n, d) = a.shape();
    cfg.validate(d)?;
    let oracle = LossOracle::new(a, b)?;
    if oracle.is_consistent() {
        return Err(CliError::Numerical(LessError::ConsistentSystem {
            loss: oracle.optimal_loss(),
        }));
    }
    let qs = cfg.reported_qs();
    let mut rows = Vec::new();
    for (id, shape) in cfg.configs.iter().enumerate() {
        let base = cfg.mode.config(shape.m, shape.nnz, n, 0);
        let per_repeat: Vec<Vec<f64>> = worker_pool()
            .install(|| {
                (0..cfg.repeats)
                    .into_par_iter()
                    .map(|r| one_repeat(a, b, &oracle, &base, &qs, derive_seed(cfg.seed, &[id as u64, r as u64])))
                    .collect::<Result<_, _>>()
            })
            .map_err(|e| CliError::from(e).context(format!("config {id} (m = {}, nnz = {})", shape.m, shape.nnz)))?;
        for (k, &q) in qs.iter().enumerate() {
            let vals: Vec<f64> = per_repeat.iter().map(|v| v[k]).collect();
            let (mean, se) = mean_and_se(&vals);
            rows.push(ExperimentRow {
                config_id: id,
                m: shape.m,
                nnz: shape.nnz,
                q,
                mean_rel_err: mean,
                stderr: se,
                repeats: cfg.repeats,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_rows<W: Write>(out: W, rows: &[ExperimentRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use less_core::synth::SynthSpec;

    #[test]
    fn default_grid_and_configs() {
        assert_eq!(default_q_grid(256), vec![1, 4, 16, 64, 256]);
        assert_eq!(default_q_grid(10), vec![1, 4, 10]);
        assert_eq!(default_q_grid(1), vec![1]);
        let c = default_configs(512, 4).unwrap();
        assert_eq!(c.iter().map(|s| (s.m, s.nnz)).collect::<Vec<_>>(), vec![(256, 2), (128, 4), (64, 8), (32, 16)]);
        assert!(default_configs(100, 4).is_err());
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig {
            q_grid: vec![1, 4],
            configs: vec![SketchShape { m: 64, nnz: 4 }, SketchShape { m: 32, nnz: 8 }],
            repeats: 2,
            mode: Mode::Lessuniform,
            seed: 0,
        };
        assert!(ok.validate(10).is_ok());
        assert!(ok.validate(40).is_err());
        let unequal = ExperimentConfig {
            configs: vec![SketchShape { m: 64, nnz: 4 }, SketchShape { m: 32, nnz: 4 }],
            ..ok.clone()
        };
        assert!(matches!(unequal.validate(10), Err(CliError::Usage(_))));
        let unsorted = ExperimentConfig {
            q_grid: vec![4, 1],
            ..ok.clone()
        };
        assert!(unsorted.validate(10).is_err());
        let empty = ExperimentConfig { q_grid: vec![], ..ok };
        assert!(empty.validate(10).is_err());
    }

    #[test]
    fn single_column_grid() {
        let p = SynthSpec::new(300, 4).seed(1).generate().unwrap();
        let cfg = ExperimentConfig {
            q_grid: vec![1],
            configs: vec![SketchShape { m: 40, nnz: 4 }],
            repeats: 3,
            mode: Mode::Less,
            seed: 5,
        };
        let rows = experiment_averaging(&p.a, &p.b, &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].q, rows[0].repeats), (1, 3));
        assert!(rows[0].mean_rel_err > 0.0);
    }

    #[test]
    fn q_one_row_always_emitted() {
        let p = SynthSpec::new(300, 4).seed(2).generate().unwrap();
        let cfg = ExperimentConfig {
            q_grid: vec![2, 4],
            configs: vec![SketchShape { m: 40, nnz: 4 }],
            repeats: 2,
            mode: Mode::Lessuniform,
            seed: 5,
        };
        let qs: Vec<usize> = experiment_averaging(&p.a, &p.b, &cfg).unwrap().iter().map(|r| r.q).collect();
        assert_eq!(qs, vec![1, 2, 4]);
    }
}
