//! In-process simulation of the multi-machine streaming model: a data
//! server hands out row streams, each machine keeps a cost ledger, and the
//! two-pass protocol averages one sketched estimate per machine.
//!
//! Every machine runs pass 1 itself with a shared seed, so all of them
//! arrive at the same preconditioner without any broadcast, and every
//! ledger records exactly two passes.

use std::sync::OnceLock;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{LessError, Result};
use crate::less::{LessConfig, SketchAccumulator};
use crate::leverage::{
    approx_leverage_score, preconditioner_sketch_config, Preconditioner, DEFAULT_PROBE_WIDTH,
};
use crate::matrix::{invert_upper, pcg_normal_rhs, qr_r_owned, DenseMatrix, DenseVector};
use crate::rng::derive_seed;
use crate::solver::{average_estimates, default_max_iters, default_tol, EstimateBundle};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LESS_THREADS";

/// Extra words allowed per dimension on top of `m·d + d·k`.
pub const SPACE_SLACK_PER_DIM: usize = 8;

/// Read-only row provider shared by all machines.
#[derive(Debug, Clone, Copy)]
pub struct DataServer<'a> {
    a: &'a DenseMatrix,
    b: &'a DenseVector,
}

impl<'a> DataServer<'a> {
    pub fn new(a: &'a DenseMatrix, b: &'a DenseVector) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(LessError::DimensionMismatch {
                expected: a.rows(),
                found: b.len(),
            });
        }
        Ok(DataServer { a, b })
    }

    /// Row count, known to machines up front.
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn handle(&self, machine_id: usize) -> StreamHandle<'a> {
        StreamHandle {
            server: *self,
            machine_id,
            position: 0,
            opens: 0,
            is_open: false,
            rows_read: 0,
            index_sum: 0,
            delivered: 0,
        }
    }
}

/// One machine's access to the data: open, then read rows in order.
#[derive(Debug, Clone)]
pub struct StreamHandle<'a> {
    server: DataServer<'a>,
    machine_id: usize,
    position: usize,
    opens: usize,
    is_open: bool,
    rows_read: usize,
    index_sum: u64,
    delivered: usize,
}

impl<'a> StreamHandle<'a> {
    /// Open (or re-open) the stream at row 0. Each call counts as a pass.
    pub fn open(&mut self) {
        self.position = 0;
        self.opens += 1;
        self.is_open = true;
        self.index_sum = 0;
        self.delivered = 0;
    }

    /// The next `(row, label)` pair, or `None` once exhausted.
    pub fn next_row(&mut self) -> Result<Option<(&'a [f64], f64)>> {
        if !self.is_open {
            return Err(LessError::StreamViolation {
                machine: self.machine_id,
                reason: "read from a stream that is not open".into(),
            });
        }
        let i = self.position;
        if i >= self.server.n() {
            return Ok(None);
        }
        self.position += 1;
        self.rows_read += 1;
        self.index_sum += i as u64;
        self.delivered += 1;
        Ok(Some((self.server.a.row(i), self.server.b[i])))
    }

    /// Close the stream, checking every row was delivered exactly once.
    pub fn finish_pass(&mut self) -> Result<()> {
        let n = self.server.n() as u64;
        if self.delivered as u64 != n || self.index_sum != n * n.saturating_sub(1) / 2 {
            return Err(LessError::StreamViolation {
                machine: self.machine_id,
                reason: format!(
                    "pass ended after {} of {} rows (index checksum {})",
                    self.delivered, n, self.index_sum
                ),
            });
        }
        self.is_open = false;
        Ok(())
    }

    pub fn machine_id(&self) -> usize {
        self.machine_id
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn opens(&self) -> usize {
        self.opens
    }

    pub fn rows_read(&self) -> usize {
        self.rows_read
    }

    pub fn n(&self) -> usize {
        self.server.n()
    }

    pub fn d(&self) -> usize {
        self.server.d()
    }
}

/// Live and peak real-number words held by one machine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpaceMeter {
    live: usize,
    peak: usize,
}

impl SpaceMeter {
    pub fn alloc(&mut self, words: usize) {
        self.live += words;
        self.peak = self.peak.max(self.live);
    }

    pub fn free(&mut self, words: usize) {
        debug_assert!(words <= self.live);
        self.live -= words;
    }

    /// A short-lived buffer of `words` on top of what is live.
    pub fn transient(&mut self, words: usize) {
        self.peak = self.peak.max(self.live + words);
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    pub machine_id: usize,
    /// Times the stream was opened.
    pub passes: usize,
    pub rows_read: usize,
    pub peak_words: usize,
    /// Uplink to the server.
    pub words_communicated: usize,
    /// Downlink from the server.
    pub words_received: usize,
}

#[derive(Debug, Clone)]
pub struct DistributedResult {
    pub x_hat: DenseVector,
    pub per_machine: Vec<CostLedger>,
    pub estimates: Vec<EstimateBundle>,
    pub q: usize,
    /// Space cap each ledger was checked against.
    pub space_cap: usize,
}

/// Knobs for [`run_two_pass_with`].
#[derive(Debug, Clone, Default)]
pub struct TwoPassOptions {
    /// Gaussian probe width `k`; default `max(16, 2d)`.
    pub probe_width: Option<usize>,
    /// Worker threads; default from `LESS_THREADS`, else all cores.
    pub threads: Option<usize>,
    /// Diagnostic: give every machine this pass-2 seed.
    pub machine_seed_override: Option<u64>,
    /// Per-machine cap on peak words; default [`space_cap`].
    pub space_cap: Option<usize>,
}

pub fn default_probe_width(d: usize) -> usize {
    DEFAULT_PROBE_WIDTH.max(2 * d)
}

/// `m·d + d·k + 8d`.
pub fn space_cap(m: usize, d: usize, k: usize) -> usize {
    m * d + d * k + SPACE_SLACK_PER_DIM * d
}

/// Seed machine `id` uses for its pass-2 sketch.
pub fn machine_seed(seed: u64, id: usize) -> u64 {
    derive_seed(seed, &[2, id as u64])
}

fn pass_one_seed(seed: u64) -> u64 {
    derive_seed(seed, &[1])
}

fn probe_seed(seed: u64) -> u64 {
    derive_seed(seed, &[3])
}

/// `LESS_THREADS` if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Shared pool sized by [`thread_cap`].
pub fn worker_pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| build_pool(thread_cap()))
}

fn build_pool(threads: Option<usize>) -> ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    builder.build().expect("thread pool")
}

fn collect_failures<R>(results: Vec<Result<R>>) -> Result<Vec<R>> {
    results
        .into_iter()
        .enumerate()
        .map(|(id, r)| {
            r.map_err(|cause| LessError::MachineFailed {
                id,
                cause: Box::new(cause),
            })
        })
        .collect()
}

/// Run independent machine tasks on the worker pool. Output order follows
/// `tasks`; the first failing machine (by position) is reported.
pub fn run_machines_parallel<T, R, F>(tasks: &[T], run: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    run_machines_on(worker_pool(), tasks, run)
}

/// [`run_machines_parallel`] on a dedicated pool of `threads` workers.
pub fn run_machines_with_threads<T, R, F>(threads: usize, tasks: &[T], run: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    run_machines_on(&build_pool(Some(threads.max(1))), tasks, run)
}

fn run_machines_on<T, R, F>(pool: &ThreadPool, tasks: &[T], run: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let results: Vec<Result<R>> = pool.install(|| tasks.par_iter().map(&run).collect());
    collect_failures(results)
}

pub fn run_machines_sequential<T, R, F>(tasks: &[T], run: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R>,
{
    collect_failures(tasks.iter().map(run).collect())
}

/// Pass 1 on one machine: sketch `A` with score-free uniform sparsification,
/// QR the sketch in place and invert `R`. Returns `P` with an implicit probe
/// of width `k`, so the machine holds `d²` words afterwards.
pub fn machine_pass_one(
    handle: &mut StreamHandle<'_>,
    cfg: &LessConfig,
    k: usize,
    seed: u64,
    meter: &mut SpaceMeter,
) -> Result<Preconditioner> {
    let (n, d) = (handle.n(), handle.d());
    let embed = preconditioner_sketch_config(n, d, cfg.m, pass_one_seed(seed));
    let mut acc = SketchAccumulator::new(embed, d)?;
    meter.alloc(cfg.m * d + cfg.m);
    meter.alloc(d + 1);
    handle.open();
    while let Some((row, _)) = handle.next_row()? {
        acc.ingest_row(row, 0.0, 0.0)?;
    }
    handle.finish_pass()?;
    meter.transient(acc.max_column_nnz());
    meter.free(d + 1);
    let (sa, _) = acc.into_parts();
    meter.free(cfg.m);
    // One Householder vector at a time beside the overwritten sketch.
    meter.transient(cfg.m);
    let r = qr_r_owned(sa)?;
    meter.alloc(d * d);
    meter.free(cfg.m * d);
    let p = invert_upper(&r)?;
    meter.transient(d * d);
    Preconditioner::new_implicit(p, n, k, probe_seed(seed))
}

/// The single-pass estimator given `P`: score each row against the
/// preconditioner, fold it into `(SA, Sb)`, reduce `Sb` to `(SA)ᵀSb`, then
/// solve with CG preconditioned by `P`.
pub fn machine_pass_two(
    handle: &mut StreamHandle<'_>,
    pre: &Preconditioner,
    cfg: &LessConfig,
    meter: &mut SpaceMeter,
) -> Result<EstimateBundle> {
    let d = handle.d();
    if pre.dim() != d {
        return Err(LessError::DimensionMismatch {
            expected: d,
            found: pre.dim(),
        });
    }
    let mut acc = SketchAccumulator::new(cfg.clone(), d)?;
    meter.alloc(cfg.m * d + cfg.m);
    meter.alloc(d + 1);
    handle.open();
    while let Some((row, label)) = handle.next_row()? {
        let score = if cfg.uses_scores() {
            approx_leverage_score(row, pre)
        } else {
            0.0
        };
        acc.ingest_row(row, label, score)?;
    }
    handle.finish_pass()?;
    // Score scratch (`Pᵀa` plus one probe value) and the column buffer.
    meter.transient(d + 1 + acc.max_column_nnz());
    meter.free(d + 1);

    let (sa, sb) = acc.into_parts();
    let c = sa.t_matvec(sb.as_slice())?;
    meter.alloc(d);
    drop(sb);
    meter.free(cfg.m);
    // x, gradient, preconditioned residual, direction, P·dir, normal product.
    meter.transient(6 * d);
    let sol = pcg_normal_rhs(&sa, &c, pre.p(), default_tol(), default_max_iters(d))?;
    Ok(EstimateBundle {
        x: sol.x,
        cg_iters: sol.iterations,
        seed: cfg.seed,
    })
}

/// Single-pass setting: the machine already has `P` and reads the data once.
pub fn run_single_pass(
    a: &DenseMatrix,
    b: &DenseVector,
    pre: &Preconditioner,
    cfg: &LessConfig,
    machine_id: usize,
) -> Result<(EstimateBundle, CostLedger)> {
    let server = DataServer::new(a, b)?;
    let mut handle = server.handle(machine_id);
    let mut meter = SpaceMeter::default();
    meter.alloc(pre.dim() * pre.dim());
    let est = machine_pass_two(&mut handle, pre, cfg, &mut meter)?;
    let ledger = CostLedger {
        machine_id,
        passes: handle.opens(),
        rows_read: handle.rows_read(),
        peak_words: meter.peak(),
        words_communicated: est.x.len(),
        words_received: 0,
    };
    Ok((est, ledger))
}

fn run_machine(
    server: DataServer<'_>,
    id: usize,
    cfg: &LessConfig,
    seed: u64,
    k: usize,
    pass_two_seed: u64,
) -> Result<(EstimateBundle, CostLedger)> {
    let mut handle = server.handle(id);
    let mut meter = SpaceMeter::default();
    let pre = machine_pass_one(&mut handle, cfg, k, seed, &mut meter)?;
    let est = machine_pass_two(&mut handle, &pre, &cfg.with_seed(pass_two_seed), &mut meter)?;
    Ok((
        est.clone(),
        CostLedger {
            machine_id: id,
            passes: handle.opens(),
            rows_read: handle.rows_read(),
            peak_words: meter.peak(),
            words_communicated: est.x.len(),
            words_received: 0,
        },
    ))
}

/// The two-pass protocol with default options.
pub fn run_two_pass(
    a: &DenseMatrix,
    b: &DenseVector,
    q: usize,
    cfg: &LessConfig,
    seed: u64,
) -> Result<DistributedResult> {
    run_two_pass_with(a, b, q, cfg, seed, &TwoPassOptions::default())
}

/// `q` machines each build `P` in pass 1 and a LESS estimate in pass 2; the
/// server averages the estimates. Ledgers are audited for two passes and the
/// space cap before returning.
pub fn run_two_pass_with(
    a: &DenseMatrix,
    b: &DenseVector,
    q: usize,
    cfg: &LessConfig,
    seed: u64,
    opts: &TwoPassOptions,
) -> Result<DistributedResult> {
    if q == 0 {
        return Err(LessError::InvalidConfig("need at least one machine".into()));
    }
    cfg.validate()?;
    let server = DataServer::new(a, b)?;
    let d = server.d();
    if cfg.m < d {
        return Err(LessError::InvalidConfig(format!(
            "sketch size m = {} is below d = {d}",
            cfg.m
        )));
    }
    let k = opts.probe_width.unwrap_or_else(|| default_probe_width(d));
    let cap = opts.space_cap.unwrap_or_else(|| space_cap(cfg.m, d, k));
    let ids: Vec<usize> = (0..q).collect();
    let task = |&id: &usize| {
        let s = opts.machine_seed_override.unwrap_or_else(|| machine_seed(seed, id));
        run_machine(server, id, cfg, seed, k, s)
    };
    let out = match opts.threads {
        Some(t) => run_machines_with_threads(t, &ids, task)?,
        None => run_machines_parallel(&ids, task)?,
    };
    let (estimates, per_machine): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    audit_passes(&per_machine, 2)?;
    check_space(&per_machine, cap)?;
    Ok(DistributedResult {
        x_hat: average_estimates(&estimates)?,
        per_machine,
        estimates,
        q,
        space_cap: cap,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassReport {
    pub declared: usize,
    pub machines: usize,
    pub max_passes: usize,
}

/// Check a single machine's ledger against the protocol's declared passes.
pub fn audit_single_pass(ledger: &CostLedger, declared: usize) -> Result<PassReport> {
    audit_passes(std::slice::from_ref(ledger), declared)
}

/// Every ledger must show exactly `declared` passes.
pub fn audit_passes(ledgers: &[CostLedger], declared: usize) -> Result<PassReport> {
    for l in ledgers {
        if l.passes != declared {
            return Err(LessError::PassViolation {
                machine: l.machine_id,
                expected: declared,
                observed: l.passes,
            });
        }
    }
    Ok(PassReport {
        declared,
        machines: ledgers.len(),
        max_passes: ledgers.iter().map(|l| l.passes).max().unwrap_or(0),
    })
}

pub fn check_space(ledgers: &[CostLedger], cap: usize) -> Result<()> {
    match ledgers.iter().find(|l| l.peak_words > cap) {
        Some(l) => Err(LessError::SpaceCapExceeded {
            machine: l.machine_id,
            peak: l.peak_words,
            cap,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leverage::exact_leverage_scores;
    use crate::matrix::thin_qr;
    use crate::rng::gaussian_matrix;

    fn problem(n: usize, d: usize, seed: u64) -> (DenseMatrix, DenseVector) {
        let a = gaussian_matrix(n, d, seed);
        let b = DenseVector::new(gaussian_matrix(n, 1, seed + 1).into_vec()).unwrap();
        (a, b)
    }

    #[test]
    fn stream_delivers_in_order_and_counts_opens() {
        let (a, b) = problem(5, 2, 1);
        let server = DataServer::new(&a, &b).unwrap();
        let mut h = server.handle(3);
        assert!(h.next_row().is_err());
        h.open();
        let mut seen = 0;
        while let Some((row, label)) = h.next_row().unwrap() {
            assert_eq!(row, a.row(seen));
            assert_eq!(label, b[seen]);
            seen += 1;
        }
        assert_eq!(seen, 5);
        h.finish_pass().unwrap();
        h.open();
        assert_eq!(h.position(), 0);
        assert_eq!(h.opens(), 2);
        h.next_row().unwrap();
        assert!(matches!(h.finish_pass(), Err(LessError::StreamViolation { machine: 3, .. })));
    }

    #[test]
    fn meter_tracks_peak() {
        let mut m = SpaceMeter::default();
        m.alloc(10);
        m.transient(5);
        m.free(10);
        m.alloc(3);
        assert_eq!((m.live(), m.peak()), (3, 15));
    }

    #[test]
    fn single_machine_is_its_own_average() {
        let (a, b) = problem(300, 4, 2);
        let cfg = LessConfig::leverage(24, 4.0, 0);
        let res = run_two_pass(&a, &b, 1, &cfg, 9).unwrap();
        assert_eq!(res.x_hat, res.estimates[0].x);
        assert_eq!(res.per_machine[0].passes, 2);
        assert_eq!(res.per_machine[0].rows_read, 600);
        assert_eq!(res.per_machine[0].words_communicated, 4);
    }

    #[test]
    fn shared_seed_machines_agree() {
        let (a, b) = problem(300, 4, 3);
        let cfg = LessConfig::leverage(24, 4.0, 0);
        let opts = TwoPassOptions {
            machine_seed_override: Some(5),
            ..Default::default()
        };
        let res = run_two_pass_with(&a, &b, 2, &cfg, 1, &opts).unwrap();
        assert_eq!(res.estimates[0].x, res.estimates[1].x);
        assert_eq!(res.x_hat, res.estimates[0].x);
    }

    #[test]
    fn single_pass_given_p() {
        let (a, b) = problem(200, 3, 4);
        let p = invert_upper(&thin_qr(&a).unwrap().r).unwrap();
        let pre = Preconditioner::new_implicit(p, 200, 8, 1).unwrap();
        let (est, ledger) =
            run_single_pass(&a, &b, &pre, &LessConfig::leverage(20, 3.0, 2), 0).unwrap();
        assert_eq!(audit_single_pass(&ledger, 1).unwrap().max_passes, 1);
        assert_eq!(ledger.rows_read, 200);
        assert!(est.x.is_finite());
    }

    #[test]
    fn triple_open_is_a_violation() {
        let (a, b) = problem(10, 2, 5);
        let server = DataServer::new(&a, &b).unwrap();
        let mut h = server.handle(0);
        for _ in 0..3 {
            h.open();
        }
        let ledger = CostLedger {
            passes: h.opens(),
            ..Default::default()
        };
        assert_eq!(
            audit_single_pass(&ledger, 2),
            Err(LessError::PassViolation {
                machine: 0,
                expected: 2,
                observed: 3
            })
        );
    }

    #[test]
    fn machine_failures_are_tagged() {
        let tasks = [1, 2, 3];
        let err = run_machines_sequential(&tasks, |&t| {
            if t == 2 {
                Err(LessError::EmptyInput)
            } else {
                Ok(t)
            }
        })
        .unwrap_err();
        assert_eq!(
            err,
            LessError::MachineFailed {
                id: 1,
                cause: Box::new(LessError::EmptyInput)
            }
        );
        let none: Vec<usize> = run_machines_parallel(&[] as &[usize], |&t| Ok(t)).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn tiny_cap_is_reported() {
        let (a, b) = problem(100, 3, 6);
        let opts = TwoPassOptions {
            space_cap: Some(10),
            ..Default::default()
        };
        let err = run_two_pass_with(&a, &b, 2, &LessConfig::leverage(12, 2.0, 0), 0, &opts);
        assert!(matches!(err, Err(LessError::SpaceCapExceeded { cap: 10, .. })));
    }

    #[test]
    fn machine_p_is_a_good_preconditioner() {
        let (a, b) = problem(1000, 5, 7);
        let server = DataServer::new(&a, &b).unwrap();
        let mut h = server.handle(0);
        let mut meter = SpaceMeter::default();
        let pre = machine_pass_one(&mut h, &LessConfig::leverage(40, 4.0, 0), 16, 3, &mut meter)
            .unwrap();
        let exact = exact_leverage_scores(&a).unwrap();
        for (i, row) in a.row_iter().enumerate().take(50) {
            let ratio = approx_leverage_score(row, &pre) / exact.scores()[i];
            assert!(ratio > 0.05 && ratio < 20.0, "row {i}: ratio {ratio}");
        }
    }
}
