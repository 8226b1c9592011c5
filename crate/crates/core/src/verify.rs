//! Monte Carlo checks of the LESS embedding's moment, concentration and
//! bias properties.
//!
//! Every check is deterministic given `(seed, trials)`: trial `t` draws from
//! streams derived from `(seed, t)`, trials run on the worker pool, and
//! results are folded in trial order. Pass rules compare against exact
//! oracles or scaling ratios; no unspecified absolute constant is asserted,
//! except the fitted [`MOMENT_KAPPA`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributed::worker_pool;
use crate::error::{LessError, Result};
use crate::less::{sample_less_row, LessConfig, SketchAccumulator};
use crate::leverage::{exact_leverage_scores, leverage_from_basis, LeverageScores};
use crate::matrix::{
    invert_upper, lstsq_exact, spectral_norm_sym, sym_eigenvalues, thin_qr, DenseMatrix,
    DenseVector,
};
use crate::rng::{derive_seed, gaussian_matrix, StreamKey};
use crate::solver::{gamma, scaled_inverse_gram, LossOracle};
use crate::synth::SynthSpec;

/// Fitted constant for the moment check at `s = 1`: the statistic divided by
/// `(p/2)³·√d·√(d·ln(e·d))`. Calibrated on incoherent bases with `C = I`,
/// `d ∈ {2, 4, 8, 16}` and `p ∈ {2, 4}`, where the ratio stays below 1.1.
pub const MOMENT_KAPPA: f64 = 1.5;

/// Column names of the CSV form of [`McReport`].
pub const REPORT_HEADER: [&str; 6] = ["claim_id", "trials", "statistic", "reference", "passed", "stderr"];

const JACKKNIFE_BLOCKS: usize = 20;
const CHUNKS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub claim_id: String,
    pub trials: usize,
    pub statistic: f64,
    /// Bound or reference value the statistic is compared against.
    pub reference: f64,
    pub passed: bool,
    pub stderr: f64,
    /// Trials dropped by a trimming rule (not part of the CSV form).
    pub excluded: usize,
}

impl McReport {
    fn new(claim_id: impl Into<String>, trials: usize, statistic: f64, reference: f64, stderr: f64) -> Self {
        McReport {
            claim_id: claim_id.into(),
            trials,
            statistic,
            reference,
            passed: statistic <= reference,
            stderr,
            excluded: 0,
        }
    }

    fn excluding(mut self, excluded: usize) -> Self {
        self.excluded = excluded;
        self
    }

    /// Fields in [`REPORT_HEADER`] order.
    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.claim_id.clone(),
            self.trials.to_string(),
            self.statistic.to_string(),
            self.reference.to_string(),
            self.passed.to_string(),
            self.stderr.to_string(),
        ]
    }
}

impl fmt::Display for McReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: statistic {:.4e} vs reference {:.4e} (se {:.2e}, {} trials",
            if self.passed { "PASS" } else { "FAIL" },
            self.claim_id,
            self.statistic,
            self.reference,
            self.stderr,
            self.trials
        )?;
        if self.excluded > 0 {
            write!(f, ", {} excluded", self.excluded)?;
        }
        write!(f, ")")
    }
}

/// Window on the eigenvalues of `(SU)ᵀ(SU)` outside of which a sketch is
/// dropped from bias estimates, standing in for conditioning on the
/// embedding event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimRule {
    pub lo: f64,
    pub hi: f64,
}

impl TrimRule {
    pub fn none() -> Self {
        TrimRule {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    /// The two-sided `η` embedding condition itself.
    pub fn embedding(eta: f64) -> Self {
        TrimRule {
            lo: 1.0 / (1.0 + eta),
            hi: 1.0 + eta,
        }
    }

    fn keeps(&self, eigs: &[f64]) -> bool {
        eigs.first().is_some_and(|&l| l >= self.lo) && eigs.last().is_some_and(|&h| h <= self.hi)
    }
}

impl Default for TrimRule {
    /// Drops only wildly distorted sketches.
    fn default() -> Self {
        TrimRule { lo: 0.1, hi: 10.0 }
    }
}

fn trial_seed(seed: u64, tag: u64, t: usize) -> u64 {
    derive_seed(seed, &[tag, t as u64])
}

fn par_trials<T: Send>(trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    worker_pool().install(|| (0..trials).into_par_iter().map(f).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn mean_vec(samples: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; samples[0].len()];
    for s in samples {
        for (o, v) in out.iter_mut().zip(s.iter()) {
            *o += v;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

/// `f(mean of samples)` and its delete-a-block jackknife standard error.
fn jackknife(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    let full = f(&mean_vec(&refs));
    let blocks = JACKKNIFE_BLOCKS.min(samples.len());
    if blocks < 2 {
        return (full, 0.0);
    }
    let len = samples[0].len();
    let total: Vec<f64> = mean_vec(&refs).iter().map(|v| v * samples.len() as f64).collect();
    let mut estimates = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let lo = b * samples.len() / blocks;
        let hi = (b + 1) * samples.len() / blocks;
        let mut sum = total.clone();
        for s in &samples[lo..hi] {
            for j in 0..len {
                sum[j] -= s[j];
            }
        }
        let count = (samples.len() - (hi - lo)) as f64;
        sum.iter_mut().for_each(|v| *v /= count);
        estimates.push(f(&sum));
    }
    let mu = mean(&estimates);
    let var = estimates.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() * (blocks - 1) as f64
        / blocks as f64;
    (full, var.sqrt())
}

/// Orthonormal basis of `a` and its exact leverage scores.
fn basis_and_scores(a: &DenseMatrix) -> Result<(DenseMatrix, LeverageScores)> {
    let q = thin_qr(a)?.q;
    let scores = leverage_from_basis(&q);
    Ok((q, scores))
}

fn sketch(a: &DenseMatrix, b: &DenseVector, scores: &[f64], cfg: &LessConfig) -> Result<SketchAccumulator> {
    let mut acc = SketchAccumulator::new(cfg.clone(), a.cols())?;
    acc.ingest_all(a, b, scores)?;
    Ok(acc)
}

/// Eigenvalues of `(SA R⁻¹)ᵀ(SA R⁻¹)`, i.e. of the sketched Gram of an
/// orthonormal basis.
fn embedding_eigs(sa: &DenseMatrix, r_inv: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(sym_eigenvalues(&sa.matmul(r_inv)?.gram()))
}

// ---------------------------------------------------------------- isotropy

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowScaling {
    Less,
    /// Negative control: omit the `1/√p` factor.
    Unscaled,
}

/// `max |mean(xxᵀ) − I|` over `x ∈ Rⁿ` LESS rows with probabilities from
/// `scores` under `cfg`. Passes iff the statistic is within
/// `5·max(1, σ̂)/√T + 10⁻³`, where `σ̂` is the largest per-entry standard
/// deviation.
pub fn check_isotropy(scores: &LeverageScores, cfg: &LessConfig, trials: usize, seed: u64) -> McReport {
    let probs = probabilities(scores, cfg);
    isotropy_impl("isotropy", &probs, None, RowScaling::Less, trials, seed)
}

/// As [`check_isotropy`] but measured through an orthonormal basis `u`:
/// `max |mean(Uᵀx xᵀU) − I_d|`, with exact scores of `u`.
pub fn check_isotropy_in_basis(u: &DenseMatrix, cfg: &LessConfig, trials: usize, seed: u64) -> McReport {
    let probs = probabilities(&leverage_from_basis(u), cfg);
    isotropy_impl("isotropy", &probs, Some(u), RowScaling::Less, trials, seed)
}

/// Raw inclusion probabilities, bypassing scores.
pub fn check_isotropy_probs(
    probs: &[f64],
    basis: Option<&DenseMatrix>,
    trials: usize,
    seed: u64,
) -> McReport {
    isotropy_impl("isotropy", probs, basis, RowScaling::Less, trials, seed)
}

/// Negative control: rows without the `1/√p` rescaling are not isotropic.
pub fn isotropy_control(u: &DenseMatrix, cfg: &LessConfig, trials: usize, seed: u64) -> McReport {
    let probs = probabilities(&leverage_from_basis(u), cfg);
    isotropy_impl("isotropy/control", &probs, Some(u), RowScaling::Unscaled, trials, seed)
}

fn probabilities(scores: &LeverageScores, cfg: &LessConfig) -> Vec<f64> {
    scores
        .scores()
        .iter()
        .map(|&l| crate::less::inclusion_probability(l, cfg, scores.dim()))
        .collect()
}

fn isotropy_impl(
    id: &str,
    probs: &[f64],
    basis: Option<&DenseMatrix>,
    scaling: RowScaling,
    trials: usize,
    seed: u64,
) -> McReport {
    let dim = basis.map_or(probs.len(), |u| u.cols());
    let key = StreamKey::new(derive_seed(seed, &[11]));
    let chunks = CHUNKS.min(trials.max(1));
    // Per chunk: Σ yyᵀ and Σ (yyᵀ)² entrywise.
    let partial: Vec<(Vec<f64>, Vec<f64>)> = worker_pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = key.stream(c as u64);
                let mut sum = vec![0.0; dim * dim];
                let mut sq = vec![0.0; dim * dim];
                let mut x = Vec::new();
                let mut y = vec![0.0; dim];
                let lo = c * trials / chunks;
                let hi = (c + 1) * trials / chunks;
                for _ in lo..hi {
                    sample_less_row(probs, &mut rng, &mut x);
                    if scaling == RowScaling::Unscaled {
                        for (i, v) in x.iter_mut() {
                            *v *= probs[*i].sqrt();
                        }
                    }
                    match basis {
                        Some(u) => {
                            y.iter_mut().for_each(|v| *v = 0.0);
                            for &(i, v) in &x {
                                crate::matrix::axpy(v, u.row(i), &mut y);
                            }
                            for j in 0..dim {
                                for k in 0..dim {
                                    let t = y[j] * y[k];
                                    sum[j * dim + k] += t;
                                    sq[j * dim + k] += t * t;
                                }
                            }
                        }
                        None => {
                            for &(i, vi) in &x {
                                for &(j, vj) in &x {
                                    let t = vi * vj;
                                    sum[i * dim + j] += t;
                                    sq[i * dim + j] += t * t;
                                }
                            }
                        }
                    }
                }
                (sum, sq)
            })
            .collect()
    });
    let mut sum = vec![0.0; dim * dim];
    let mut sq = vec![0.0; dim * dim];
    for (s, q) in &partial {
        for j in 0..dim * dim {
            sum[j] += s[j];
            sq[j] += q[j];
        }
    }
    let t = trials as f64;
    let mut stat: f64 = 0.0;
    let mut sd_max: f64 = 0.0;
    let mut se_at_max = 0.0;
    for j in 0..dim {
        for k in 0..dim {
            let idx = j * dim + k;
            let mu = sum[idx] / t;
            let var = (sq[idx] / t - mu * mu).max(0.0) * t / (t - 1.0).max(1.0);
            let sd = var.sqrt();
            sd_max = sd_max.max(sd);
            let dev = (mu - if j == k { 1.0 } else { 0.0 }).abs();
            if dev >= stat {
                stat = dev;
                se_at_max = sd / t.sqrt();
            }
        }
    }
    let reference = 5.0 * sd_max.max(1.0) / t.sqrt() + 1e-3;
    McReport::new(id, trials, stat, reference, se_at_max)
}

// ------------------------------------------------------- subspace embedding

/// Frequency with which `(SU)ᵀ(SU)` has an eigenvalue outside
/// `[1/(1+η), 1+η]`. Passes iff at most 5%.
pub fn check_subspace_embedding(
    a: &DenseMatrix,
    cfg: &LessConfig,
    eta: f64,
    trials: usize,
    seed: u64,
) -> Result<McReport> {
    if trials == 0 {
        return Err(LessError::InvalidConfig("need at least one trial".into()));
    }
    let (u, scores) = basis_and_scores(a)?;
    let zeros = DenseVector::zeros(u.rows());
    let window = TrimRule::embedding(eta);
    let fails: Vec<Result<f64>> = par_trials(trials, |t| {
        let acc = sketch(&u, &zeros, scores.scores(), &cfg.with_seed(trial_seed(seed, 21, t)))?;
        let eigs = sym_eigenvalues(&acc.sa().gram());
        Ok(if window.keeps(&eigs) { 0.0 } else { 1.0 })
    });
    let fails = fails.into_iter().collect::<Result<Vec<_>>>()?;
    let rate = mean(&fails);
    Ok(McReport::new(
        format!("subspace_embedding[m={},eta={eta}]", cfg.m),
        trials,
        rate,
        0.05,
        (rate * (1.0 - rate) / trials as f64).sqrt(),
    ))
}

// ------------------------------------------------------------ moment check

/// How the rows in [`check_moment_scaling_with`] are sparsified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sparsifier {
    /// `p_i = min(1, s·l_i/d)`.
    Leverage,
    /// Negative control: `p_i = min(1, s/n)`, blind to leverage.
    Uniform,
}

/// `(E|tr C − xᵀUCUᵀx|^p)^{1/p}` for each `s`, plus three summary rows:
/// the ratio between `s = d` (or the largest `s`) and the smallest `s`,
/// monotonicity across `s` up to 2 SE, and the fitted constant at the
/// smallest `s` against [`MOMENT_KAPPA`].
pub fn check_moment_scaling(
    u: &DenseMatrix,
    c: &DenseMatrix,
    s_values: &[f64],
    p: u32,
    trials: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    check_moment_scaling_with(u, c, s_values, p, trials, seed, Sparsifier::Leverage)
}

pub fn check_moment_scaling_with(
    u: &DenseMatrix,
    c: &DenseMatrix,
    s_values: &[f64],
    p: u32,
    trials: usize,
    seed: u64,
    sparsifier: Sparsifier,
) -> Result<Vec<McReport>> {
    let (n, d) = u.shape();
    if p < 2 || !p.is_multiple_of(2) {
        return Err(LessError::InvalidConfig(format!("moment order must be even and >= 2, got {p}")));
    }
    if c.shape() != (d, d) {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: c.rows(),
        });
    }
    if s_values.is_empty() || trials < 2 {
        return Err(LessError::InvalidConfig("need s values and at least two trials".into()));
    }
    let mut s_sorted = s_values.to_vec();
    s_sorted.sort_by(f64::total_cmp);
    let tag = match sparsifier {
        Sparsifier::Leverage => "lemma4",
        Sparsifier::Uniform => "lemma4/control",
    };
    let scores = leverage_from_basis(u);
    let tr_c = c.trace();
    let mut stats = Vec::with_capacity(s_sorted.len());
    let mut reports = Vec::new();
    for (si, &s) in s_sorted.iter().enumerate() {
        let probs: Vec<f64> = match sparsifier {
            Sparsifier::Leverage => scores.scores().iter().map(|&l| (s * l / d as f64).min(1.0)).collect(),
            Sparsifier::Uniform => vec![(s / n as f64).min(1.0); n],
        };
        let key = StreamKey::new(derive_seed(seed, &[31, si as u64]));
        let samples: Vec<Vec<f64>> = par_trials(trials, |t| {
            let mut rng = key.stream(t as u64);
            let mut x = Vec::new();
            sample_less_row(&probs, &mut rng, &mut x);
            let mut y = vec![0.0; d];
            for &(i, v) in &x {
                crate::matrix::axpy(v, u.row(i), &mut y);
            }
            let cy = c.matvec(&y).expect("square c");
            let z = tr_c - crate::matrix::dot(&y, cy.as_slice());
            vec![z.powi(p as i32)]
        });
        let (stat, se) = jackknife(&samples, |m| m[0].max(0.0).powf(1.0 / p as f64));
        stats.push((stat, se));
        reports.push(McReport {
            passed: stat.is_finite(),
            ..McReport::new(format!("{tag}_moment[s={s},p={p}]"), trials, stat, f64::INFINITY, se)
        });
    }

    let (lo, lo_se) = stats[0];
    let top = s_sorted.iter().position(|&s| s == d as f64).unwrap_or(s_sorted.len() - 1);
    let (hi, hi_se) = stats[top];
    let (ratio, ratio_se) = if lo == 0.0 {
        (0.0, 0.0)
    } else {
        let r = hi / lo;
        let rel_hi = if hi > 0.0 { hi_se / hi } else { 0.0 };
        (r, r * (rel_hi.powi(2) + (lo_se / lo).powi(2)).sqrt())
    };
    reports.push(McReport::new(
        format!("{tag}_ratio[s={}/s={}]", s_sorted[top], s_sorted[0]),
        trials,
        ratio,
        1.0 + 2.0 * ratio_se,
        ratio_se,
    ));

    // Largest increase between consecutive s, in units of its standard error.
    let mut worst = f64::NEG_INFINITY;
    for w in stats.windows(2) {
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        let z = if se > 0.0 { (w[1].0 - w[0].0) / se } else if w[1].0 > w[0].0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(z);
    }
    if stats.len() < 2 {
        worst = 0.0;
    }
    reports.push(McReport::new(format!("{tag}_monotone"), trials, worst, 2.0, 0.0));

    let dd = d as f64;
    let scale = (p as f64 / 2.0).powi(3) * dd.sqrt() * (dd * (1.0 + dd.ln())).sqrt();
    reports.push(McReport::new(
        format!("{tag}_kappa[s={}]", s_sorted[0]),
        trials,
        lo / scale,
        MOMENT_KAPPA,
        lo_se / scale,
    ));
    Ok(reports)
}

// -------------------------------------------------------- sparsifier norm

/// Frequency of `‖Σ ξ_i² u_iu_iᵀ‖ ≥ 1 + 3d·ln(d/δ)/s` with
/// `ξ_i² = b_i/p_i`, `p_i = min(1, s·l_i/d)`. Passes iff the frequency is
/// at most `δ + 3·√(δ(1−δ)/T)`.
pub fn check_sparsifier_norm(u: &DenseMatrix, s: f64, delta: f64, trials: usize, seed: u64) -> Result<McReport> {
    check_sparsifier_norm_scaled(u, s, delta, 1.0, trials, seed)
}

/// [`check_sparsifier_norm`] with the excess `3d·ln(d/δ)/s` multiplied by
/// `threshold_scale`; small scales are negative controls.
pub fn check_sparsifier_norm_scaled(
    u: &DenseMatrix,
    s: f64,
    delta: f64,
    threshold_scale: f64,
    trials: usize,
    seed: u64,
) -> Result<McReport> {
    if !(s >= 1.0) || !(delta > 0.0 && delta < 1.0) || trials == 0 {
        return Err(LessError::InvalidConfig(format!(
            "need s >= 1, delta in (0, 1), trials > 0; got s = {s}, delta = {delta}"
        )));
    }
    let d = u.cols();
    let scores = leverage_from_basis(u);
    let probs: Vec<f64> = scores.scores().iter().map(|&l| (s * l / d as f64).min(1.0)).collect();
    let dd = d as f64;
    let threshold = 1.0 + threshold_scale * 3.0 * dd * (dd / delta).ln() / s;
    let key = StreamKey::new(derive_seed(seed, &[41]));
    let hits: Vec<f64> = par_trials(trials, |t| {
        let mut rng = key.stream(t as u64);
        let mut m = DenseMatrix::zeros(d, d);
        for (i, &p) in probs.iter().enumerate() {
            if p >= 1.0 || rng.random::<f64>() < p {
                let row = u.row(i);
                for j in 0..d {
                    let w = row[j] / p;
                    crate::matrix::axpy(w, row, m.row_mut(j));
                }
            }
        }
        // Tiny slack so that ξ ≡ 1 (norm exactly 1) is not an exceedance.
        if spectral_norm_sym(&m) >= threshold * (1.0 + 1e-12) { 1.0 } else { 0.0 }
    });
    let freq = mean(&hits);
    let null_se = (delta * (1.0 - delta) / trials as f64).sqrt();
    let id = if threshold_scale == 1.0 {
        format!("lemma5_sparsifier[s={s},delta={delta}]")
    } else {
        format!("lemma5/control[s={s},delta={delta},scale={threshold_scale}]")
    };
    Ok(McReport::new(
        id,
        trials,
        freq,
        delta + 3.0 * null_se,
        (freq * (1.0 - freq) / trials as f64).sqrt(),
    ))
}

// ---------------------------------------------------- trace concentration

/// 95th percentile of `|tr Q − mean tr Q|` for `Q = (γ(SA)ᵀSA)⁻¹` over
/// independent sketches (or one sketch repeated, with `fixed`). Sketches
/// that come out rank deficient are excluded and counted.
pub fn trace_fluctuation(
    a: &DenseMatrix,
    cfg: &LessConfig,
    trials: usize,
    seed: u64,
    fixed: bool,
) -> Result<McReport> {
    let d = a.cols();
    let g = gamma(cfg.m, d)?;
    if trials < 2 {
        return Err(LessError::InvalidConfig("need at least two trials".into()));
    }
    let scores = exact_leverage_scores(a)?;
    let zeros = DenseVector::zeros(a.rows());
    let traces: Vec<Result<Option<f64>>> = par_trials(trials, |t| {
        let ts = if fixed { trial_seed(seed, 51, 0) } else { trial_seed(seed, 51, t) };
        let acc = sketch(a, &zeros, scores.scores(), &cfg.with_seed(ts))?;
        match scaled_inverse_gram(acc.sa(), g) {
            Ok(q) => Ok(Some(q.trace())),
            Err(LessError::RankDeficient { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
    let kept: Vec<f64> = traces.iter().flatten().copied().collect();
    let excluded = trials - kept.len();
    if kept.len() < 2 {
        return Err(LessError::RankDeficient {
            index: 0,
            value: 0.0,
            threshold: 0.0,
        });
    }
    let mu = mean(&kept);
    let devs: Vec<f64> = kept.iter().map(|t| (t - mu).abs()).collect();
    let stat = percentile(&devs, 0.95);
    // Spread of the percentile across batches.
    let batches = JACKKNIFE_BLOCKS.min(devs.len() / 20).max(1);
    let se = if batches >= 2 {
        let per: Vec<f64> = (0..batches)
            .map(|b| {
                let lo = b * devs.len() / batches;
                let hi = (b + 1) * devs.len() / batches;
                percentile(&devs[lo..hi], 0.95)
            })
            .collect();
        std_err(&per)
    } else {
        0.0
    };
    let id = format!("lemma6_trace{}[m={}]", if fixed { "/fixed" } else { "" }, cfg.m);
    Ok(McReport {
        passed: stat.is_finite(),
        ..McReport::new(id, trials, stat, f64::INFINITY, se).excluding(excluded)
    })
}

fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).round() as usize;
    v[idx]
}

/// Trace fluctuation at `m` and `4m`; passes iff the larger sketch's
/// statistic is at most 0.75 of the smaller's.
pub fn check_trace_concentration(a: &DenseMatrix, cfg: &LessConfig, trials: usize, seed: u64) -> Result<Vec<McReport>> {
    check_trace_concentration_growth(a, cfg, 4, trials, seed)
}

/// As [`check_trace_concentration`] with `m·growth` as the larger size;
/// `growth = 1` is a negative control.
pub fn check_trace_concentration_growth(
    a: &DenseMatrix,
    cfg: &LessConfig,
    growth: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    let small = trace_fluctuation(a, cfg, trials, seed, false)?;
    let big_cfg = LessConfig {
        m: cfg.m * growth,
        ..cfg.clone()
    };
    let big = trace_fluctuation(a, &big_cfg, trials, derive_seed(seed, &[52]), false)?;
    let ratio = big.statistic / small.statistic;
    let se = ratio * ((big.stderr / big.statistic).powi(2) + (small.stderr / small.statistic).powi(2)).sqrt();
    let tag = if growth == 4 { "lemma6_ratio" } else { "lemma6/control_ratio" };
    let summary = McReport::new(
        format!("{tag}[m={}->{}]", cfg.m, big_cfg.m),
        trials,
        ratio,
        0.75,
        se,
    )
    .excluding(small.excluded + big.excluded);
    Ok(vec![small, big, summary])
}

// -------------------------------------------------------- inversion bias

#[derive(Debug, Clone, PartialEq)]
pub struct InversionStats {
    /// `‖mean(Q_γ) − (AᵀA)⁻¹‖`.
    pub corrected: f64,
    pub corrected_se: f64,
    /// `‖mean(Q_unscaled) − (AᵀA)⁻¹‖`.
    pub uncorrected: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    pub trials: usize,
    pub excluded: usize,
}

/// Inversion bias of LESS sketches of `a` with exact scores. The corrected
/// estimate divides by `γ^power` (`power = 1` is the γ correction; other
/// powers are diagnostics).
pub fn inversion_bias_stats(
    a: &DenseMatrix,
    m: usize,
    s: f64,
    trials: usize,
    seed: u64,
    power: i32,
    trim: TrimRule,
) -> Result<InversionStats> {
    let d = a.cols();
    let g = gamma(m, d)?;
    if trials < 2 {
        return Err(LessError::InvalidConfig("need at least two trials".into()));
    }
    let qr = thin_qr(a)?;
    let scores = leverage_from_basis(&qr.q);
    let r_inv = invert_upper(&qr.r)?;
    let mut target = r_inv.matmul(&r_inv.transpose())?;
    target.symmetrize();
    let zeros = DenseVector::zeros(a.rows());
    let cfg = LessConfig::leverage(m, s, 0);
    let samples: Vec<Result<Option<Vec<f64>>>> = par_trials(trials, |t| {
        let acc = sketch(a, &zeros, scores.scores(), &cfg.with_seed(trial_seed(seed, 61, t)))?;
        let eigs = embedding_eigs(acc.sa(), &r_inv)?;
        if !trim.keeps(&eigs) {
            return Ok(None);
        }
        match scaled_inverse_gram(acc.sa(), 1.0) {
            Ok(q) => Ok(Some(q.into_vec())),
            Err(LessError::RankDeficient { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let kept: Vec<Vec<f64>> = samples.into_iter().flatten().collect();
    let excluded = trials - kept.len();
    if kept.len() < 2 {
        return Err(LessError::InvalidConfig("every sketch was trimmed".into()));
    }
    let scale = g.powi(power);
    let dev = |mean_q: &[f64], c: f64| -> f64 {
        let mut diff = DenseMatrix::from_row_major(d, d, mean_q.iter().map(|v| v / c).collect())
            .expect("finite mean");
        diff.add_scaled(-1.0, &target);
        spectral_norm_sym(&diff)
    };
    let (corrected, corrected_se) = jackknife(&kept, |mq| dev(mq, scale));
    let (uncorrected, _) = jackknife(&kept, |mq| dev(mq, 1.0));
    let (ratio, ratio_se) = jackknife(&kept, |mq| dev(mq, scale) / dev(mq, 1.0));
    Ok(InversionStats {
        corrected,
        corrected_se,
        uncorrected,
        ratio,
        ratio_se,
        trials,
        excluded,
    })
}

/// `‖mean(Q_γ) − (AᵀA)⁻¹‖ / ‖mean(Q_unscaled) − (AᵀA)⁻¹‖ ≤ 0.5`.
/// Requires `m ≥ 10d`.
pub fn check_inversion_bias(a: &DenseMatrix, m: usize, s: f64, trials: usize, seed: u64) -> Result<McReport> {
    check_inversion_bias_with(a, m, s, trials, seed, 1)
}

/// Other powers are diagnostics; `power = -1` applies γ in the wrong
/// direction and is the negative control.
pub fn check_inversion_bias_with(
    a: &DenseMatrix,
    m: usize,
    s: f64,
    trials: usize,
    seed: u64,
    power: i32,
) -> Result<McReport> {
    let d = a.cols();
    gamma(m, d)?;
    if m < 10 * d {
        return Err(LessError::InvalidConfig(format!("inversion bias check needs m >= 10d, got m = {m}, d = {d}")));
    }
    let st = inversion_bias_stats(a, m, s, trials, seed, power, TrimRule::default())?;
    let tag = if power == 1 { "thm8_inversion".to_string() } else { format!("thm8/control[gamma^{power}]") };
    Ok(McReport::new(format!("{tag}[m={m},s={s}]"), trials, st.ratio, 0.5, st.ratio_se).excluding(st.excluded))
}

// ------------------------------------------------------ least squares bias

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchFamily {
    /// LESS with exact leverage scores and this `s`.
    Less { s: f64 },
    /// Dense i.i.d. `N(0, 1/m)` sketch; its sketch-and-solve estimator is unbiased.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStats {
    /// `‖A·mean(x̃) − b‖²/L(x*) − 1`.
    pub bias: f64,
    pub bias_se: f64,
    /// Mean single-estimate relative excess loss.
    pub mean_error: f64,
    pub trials: usize,
    pub excluded: usize,
}

impl BiasStats {
    /// Expected bias statistic of an unbiased estimator: the averaged
    /// estimate still carries `mean_error/T`.
    pub fn variance_floor(&self) -> f64 {
        self.mean_error / (self.trials - self.excluded) as f64
    }
}

/// Sketch-and-solve `trials` times and measure the plug-in bias of the mean
/// estimate. Fails with `ConsistentSystem` when `L(x*) = 0`.
pub fn ls_bias_stats(
    a: &DenseMatrix,
    b: &DenseVector,
    m: usize,
    family: SketchFamily,
    trials: usize,
    seed: u64,
    trim: TrimRule,
) -> Result<BiasStats> {
    if trials < 2 {
        return Err(LessError::InvalidConfig("need at least two trials".into()));
    }
    let oracle = LossOracle::new(a, b)?;
    if oracle.is_consistent() {
        return Err(LessError::ConsistentSystem {
            loss: oracle.optimal_loss(),
        });
    }
    let qr = thin_qr(a)?;
    let scores = leverage_from_basis(&qr.q);
    let r_inv = invert_upper(&qr.r)?;
    let x_star = oracle.x_star().clone();
    let estimates: Vec<Result<Option<Vec<f64>>>> = par_trials(trials, |t| {
        let ts = trial_seed(seed, 71, t);
        let (sa, sb) = match family {
            SketchFamily::Less { s } => sketch(a, b, scores.scores(), &LessConfig::leverage(m, s, ts))?.into_parts(),
            SketchFamily::Gaussian => gaussian_sketch(a, b, m, ts),
        };
        if !trim.keeps(&embedding_eigs(&sa, &r_inv)?) {
            return Ok(None);
        }
        match lstsq_exact(&sa, &sb) {
            Ok(x) => Ok(Some(x.sub(&x_star).into_vec())),
            Err(LessError::RankDeficient { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let deltas = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let kept: Vec<Vec<f64>> = deltas.into_iter().flatten().collect();
    if kept.len() < 2 {
        return Err(LessError::InvalidConfig("every sketch was trimmed".into()));
    }
    let loss_star = oracle.optimal_loss();
    let excess = |dx: &[f64]| a.matvec(dx).expect("length d").norm_sq() / loss_star;
    let (bias, bias_se) = jackknife(&kept, excess);
    let errors: Vec<f64> = kept.iter().map(|dx| excess(dx)).collect();
    Ok(BiasStats {
        bias,
        bias_se,
        mean_error: mean(&errors),
        trials,
        excluded: trials - kept.len(),
    })
}

fn gaussian_sketch(a: &DenseMatrix, b: &DenseVector, m: usize, seed: u64) -> (DenseMatrix, DenseVector) {
    let (n, d) = a.shape();
    let key = StreamKey::new(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let mut sa = DenseMatrix::zeros(m, d);
    let mut sb = DenseVector::zeros(m);
    for j in 0..m {
        let mut rng = key.stream(j as u64);
        let row = sa.row_mut(j);
        let mut acc_b = 0.0;
        for i in 0..n {
            let g: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            crate::matrix::axpy(g, a.row(i), row);
            acc_b += g * b[i];
        }
        sb[j] = acc_b;
    }
    (sa, sb)
}

/// One report per `s`: passes iff its bias is at most the smallest-`s`
/// bias plus two combined standard errors.
pub fn check_ls_bias(
    a: &DenseMatrix,
    b: &DenseVector,
    m: usize,
    s_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    let mut s_sorted = s_values.to_vec();
    s_sorted.sort_by(f64::total_cmp);
    let stats = s_sorted
        .iter()
        .map(|&s| ls_bias_stats(a, b, m, SketchFamily::Less { s }, trials, seed, TrimRule::default()))
        .collect::<Result<Vec<_>>>()?;
    let base = &stats[0];
    Ok(s_sorted
        .iter()
        .zip(&stats)
        .map(|(s, st)| {
            let se = (st.bias_se.powi(2) + base.bias_se.powi(2)).sqrt();
            McReport::new(format!("thm4_bias[m={m},s={s}]"), trials, st.bias, base.bias + 2.0 * se, st.bias_se)
                .excluding(st.excluded)
        })
        .collect())
}

/// Bias at `m` and `2m` for fixed `s`; passes iff
/// `bias(2m) ≤ 0.5·bias(m) + 2 SE`.
pub fn check_ls_bias_m_scaling(
    a: &DenseMatrix,
    b: &DenseVector,
    m: usize,
    s: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<McReport>> {
    let small = ls_bias_stats(a, b, m, SketchFamily::Less { s }, trials, seed, TrimRule::default())?;
    let big = ls_bias_stats(a, b, 2 * m, SketchFamily::Less { s }, trials, derive_seed(seed, &[72]), TrimRule::default())?;
    let se = (big.bias_se.powi(2) + 0.25 * small.bias_se.powi(2)).sqrt();
    Ok(vec![
        McReport {
            passed: true,
            ..McReport::new(format!("thm4_bias[m={m},s={s}]"), trials, small.bias, f64::INFINITY, small.bias_se)
                .excluding(small.excluded)
        },
        McReport::new(
            format!("thm4_m_scaling[m={}->{},s={s}]", m, 2 * m),
            trials,
            big.bias,
            0.5 * small.bias + 2.0 * se,
            big.bias_se,
        )
        .excluding(big.excluded),
    ])
}

/// Dense Gaussian reference: its bias statistic should sit at the variance
/// floor `mean_error/T`, within three standard errors.
pub fn gaussian_bias_control(a: &DenseMatrix, b: &DenseVector, m: usize, trials: usize, seed: u64) -> Result<McReport> {
    let st = ls_bias_stats(a, b, m, SketchFamily::Gaussian, trials, seed, TrimRule::none())?;
    Ok(McReport::new(
        format!("thm4_gaussian_reference[m={m}]"),
        trials,
        st.bias,
        st.variance_floor() + 3.0 * st.bias_se,
        st.bias_se,
    ))
}

/// Mean of `‖Ax̃ − b‖²/L(x*)` over LESS sketches with exact scores; passes
/// iff at most `bound`.
pub fn check_variance_contract(
    a: &DenseMatrix,
    b: &DenseVector,
    cfg: &LessConfig,
    trials: usize,
    seed: u64,
    bound: f64,
) -> Result<McReport> {
    let oracle = LossOracle::new(a, b)?;
    if oracle.is_consistent() {
        return Err(LessError::ConsistentSystem {
            loss: oracle.optimal_loss(),
        });
    }
    let scores = exact_leverage_scores(a)?;
    let ratios: Vec<Result<f64>> = par_trials(trials, |t| {
        let acc = sketch(a, b, scores.scores(), &cfg.with_seed(trial_seed(seed, 81, t)))?;
        let x = lstsq_exact(acc.sa(), acc.sb())?;
        Ok(oracle.loss(&x)? / oracle.optimal_loss())
    });
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(McReport::new(
        format!("thm1_variance[m={},s={}]", cfg.m, cfg.s),
        trials,
        mean(&ratios),
        bound,
        std_err(&ratios),
    ))
}

// ------------------------------------------------------------ suite

/// Named claims runnable with default desk-scale configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Isotropy,
    SubspaceEmbedding,
    MomentScaling,
    SparsifierNorm,
    TraceConcentration,
    InversionBias,
    LsBias,
    Variance,
}

impl Claim {
    pub const ALL: [Claim; 8] = [
        Claim::Isotropy,
        Claim::SubspaceEmbedding,
        Claim::MomentScaling,
        Claim::SparsifierNorm,
        Claim::TraceConcentration,
        Claim::InversionBias,
        Claim::LsBias,
        Claim::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Claim::Isotropy => "isotropy",
            Claim::SubspaceEmbedding => "subspace-embedding",
            Claim::MomentScaling => "moment-scaling",
            Claim::SparsifierNorm => "sparsifier-norm",
            Claim::TraceConcentration => "trace-concentration",
            Claim::InversionBias => "inversion-bias",
            Claim::LsBias => "ls-bias",
            Claim::Variance => "variance",
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Claim {
    type Err = LessError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Claim::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| LessError::InvalidConfig(format!("unknown claim '{s}'")))
    }
}

/// `n×d` Gaussian design, whose orthonormal basis is incoherent.
pub fn incoherent_basis(n: usize, d: usize, seed: u64) -> Result<DenseMatrix> {
    Ok(thin_qr(&gaussian_matrix(n, d, seed))?.q)
}

/// Basis whose first `rows` rows carry nearly all the leverage.
pub fn coherent_basis(n: usize, d: usize, rows: usize, seed: u64) -> Result<DenseMatrix> {
    let mut a = gaussian_matrix(n, d, seed);
    for i in 0..rows.min(n) {
        a.row_mut(i).iter_mut().for_each(|v| *v *= 1e3);
    }
    Ok(thin_qr(&a)?.q)
}

/// Run `claim` at its default configuration for dimension `d`, including
/// its negative controls (ids containing `/control` or `/fixed`, which are
/// expected to fail or be degenerate).
pub fn run_claim(claim: Claim, d: usize, trials: usize, seed: u64) -> Result<Vec<McReport>> {
    if d == 0 || trials < 2 {
        return Err(LessError::InvalidConfig("need d >= 1 and at least two trials".into()));
    }
    let df = d as f64;
    match claim {
        Claim::Isotropy => {
            let u = incoherent_basis(25 * d, d, seed)?;
            let cfg = LessConfig::leverage(1, 8.0, 0);
            Ok(vec![
                check_isotropy_in_basis(&u, &cfg, trials, seed),
                isotropy_control(&u, &cfg, trials, seed),
            ])
        }
        Claim::SubspaceEmbedding => {
            let a = gaussian_matrix(200 * d, d, seed);
            Ok(vec![
                check_subspace_embedding(&a, &LessConfig::leverage(8 * d, 8.0, 0), 0.5, trials, seed)?,
                McReport {
                    claim_id: format!("subspace_embedding/control[m={d}]"),
                    ..check_subspace_embedding(&a, &LessConfig::leverage(d, 8.0, 0), 0.5, trials, seed)?
                },
            ])
        }
        Claim::MomentScaling => {
            let n = 250 * d;
            let u = incoherent_basis(n, d, seed)?;
            let c = DenseMatrix::identity(d);
            let s_values = [1.0, 4.0, 16.0, df];
            let mut out = check_moment_scaling(&u, &c, &s_values, 2, trials, seed)?;
            let v = coherent_basis(n, d, 4 * d, seed)?;
            let control = check_moment_scaling_with(&v, &c, &[1.0], 2, trials, seed, Sparsifier::Uniform)?;
            out.extend(control.into_iter().filter(|r| r.claim_id.contains("kappa")));
            Ok(out)
        }
        Claim::SparsifierNorm => {
            let u = incoherent_basis(60 * d, d, seed)?;
            let s = (df / 2.0).max(1.0);
            Ok(vec![
                check_sparsifier_norm(&u, s, 0.1, trials, seed)?,
                check_sparsifier_norm_scaled(&u, s, 0.1, 0.02, trials, seed)?,
            ])
        }
        Claim::TraceConcentration => {
            let a = gaussian_matrix(125 * d, d, seed);
            let cfg = LessConfig::leverage(2 * d, 8.0, 0);
            let mut out = check_trace_concentration(&a, &cfg, trials, seed)?;
            out.extend(check_trace_concentration_growth(&a, &cfg, 1, trials, seed)?.pop());
            out.push(trace_fluctuation(&a, &cfg, trials, seed, true)?);
            Ok(out)
        }
        Claim::InversionBias => {
            let a = gaussian_matrix(125 * d, d, seed);
            Ok(vec![
                check_inversion_bias(&a, 10 * d, 8.0, trials, seed)?,
                check_inversion_bias_with(&a, 10 * d, 8.0, trials, seed, -1)?,
            ])
        }
        Claim::LsBias => {
            let p = SynthSpec::new(125 * d, d).noise(1.0).seed(seed).generate()?;
            let mut out = check_ls_bias(&p.a, &p.b, 6 * d, &[1.0, 16.0], trials, seed)?;
            out.extend(check_ls_bias_m_scaling(&p.a, &p.b, 4 * d, 8.0, trials, seed)?);
            out.push(gaussian_bias_control(&p.a, &p.b, 6 * d, trials.min(500), seed)?);
            Ok(out)
        }
        Claim::Variance => {
            let p = SynthSpec::new(100 * d, d).noise(1.0).seed(seed).generate()?;
            Ok(vec![check_variance_contract(&p.a, &p.b, &LessConfig::leverage(6 * d, 8.0, 0), trials, seed, 2.5)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_of_mean_matches_standard_error() {
        let xs: Vec<Vec<f64>> = (0..400).map(|i| vec![((i * 7919) % 101) as f64]).collect();
        let flat: Vec<f64> = xs.iter().map(|v| v[0]).collect();
        let (m, se) = jackknife(&xs, |v| v[0]);
        assert!((m - mean(&flat)).abs() < 1e-12);
        let classic = std_err(&flat);
        assert!((se / classic - 1.0).abs() < 0.5, "{se} vs {classic}");
    }

    #[test]
    fn scalar_isotropy() {
        let r = check_isotropy_probs(&[1.0], None, 2000, 1);
        // x = ±1 exactly, so xxᵀ = 1 in every trial.
        assert_eq!(r.statistic, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn full_density_isotropy() {
        let r = check_isotropy_probs(&[1.0; 4], None, 100_000, 2);
        assert!(r.statistic <= 0.05 && r.passed, "{r}");
    }

    #[test]
    fn sparse_isotropy_scales_its_band() {
        let r = check_isotropy_probs(&[0.01; 4], None, 100_000, 3);
        assert!(r.passed, "{r}");
        assert!(r.reference > 0.01);
    }

    #[test]
    fn trim_rule_window() {
        let t = TrimRule::embedding(0.5);
        assert!(t.keeps(&[0.7, 1.4]));
        assert!(!t.keeps(&[0.6, 1.0]));
        assert!(!t.keeps(&[1.0, 1.6]));
        assert!(TrimRule::none().keeps(&[0.0, 1e9]));
    }

    #[test]
    fn claims_parse() {
        for c in Claim::ALL {
            assert_eq!(c.name().parse::<Claim>().unwrap(), c);
        }
        assert_eq!("ls_bias".parse::<Claim>().unwrap(), Claim::LsBias);
        assert!("bogus".parse::<Claim>().is_err());
    }

    #[test]
    fn zero_c_has_zero_moment() {
        let u = incoherent_basis(40, 3, 1).unwrap();
        let c = DenseMatrix::zeros(3, 3);
        let out = check_moment_scaling(&u, &c, &[1.0, 3.0], 2, 200, 1).unwrap();
        assert_eq!(out[0].statistic, 0.0);
        assert_eq!(out[1].statistic, 0.0);
    }

    #[test]
    fn dense_sparsifier_never_exceeds() {
        let u = incoherent_basis(30, 4, 2).unwrap();
        let r = check_sparsifier_norm(&u, 1e6, 0.1, 300, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn fixed_realization_has_no_fluctuation() {
        let a = gaussian_matrix(200, 4, 3);
        let r = trace_fluctuation(&a, &LessConfig::leverage(16, 4.0, 0), 50, 1, true).unwrap();
        assert!(r.statistic.abs() < 1e-12);
    }

    #[test]
    fn consistent_system_is_rejected() {
        let p = SynthSpec::new(200, 3).noise(0.0).generate().unwrap();
        assert!(matches!(
            ls_bias_stats(&p.a, &p.b, 30, SketchFamily::Less { s: 2.0 }, 10, 0, TrimRule::none()),
            Err(LessError::ConsistentSystem { .. })
        ));
    }

    #[test]
    fn inversion_check_needs_room() {
        let a = gaussian_matrix(200, 4, 3);
        assert_eq!(
            check_inversion_bias(&a, 4, 2.0, 10, 0),
            Err(LessError::GammaUndefined { m: 4, d: 4 })
        );
        assert!(matches!(check_inversion_bias(&a, 20, 2.0, 10, 0), Err(LessError::InvalidConfig(_))));
    }
}
