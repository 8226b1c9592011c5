//! Acceptance criteria 1–12. Each test prints one `PASS`/`FAIL` line with
//! the measured statistic and its pinned tolerance, then asserts it.

use std::time::{Duration, Instant};

use less_cli::experiment::{default_configs, experiment_averaging, ExperimentConfig, ExperimentRow, Mode};
use less_core::distributed::{run_two_pass_with, space_cap, TwoPassOptions};
use less_core::leverage::exact_leverage_scores;
use less_core::matrix::{invert_upper, lstsq_exact, pcg_normal, qr_r_owned, thin_qr, DEFAULT_PCG_TOL};
use less_core::rng::{derive_seed, gaussian_matrix};
use less_core::synth::SynthSpec;
use less_core::verify::{
    check_inversion_bias, check_isotropy_in_basis, check_ls_bias, check_ls_bias_m_scaling, check_subspace_embedding,
    check_variance_contract, run_claim, Claim, McReport,
};
use less_core::{DenseMatrix, DenseVector, LessConfig};

fn report(id: u32, pass: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(id: u32, started: Instant, limit: Duration) {
    let took = started.elapsed();
    println!("  criterion {id} runtime {took:.1?} (limit {limit:?})");
    assert!(took <= limit, "criterion {id} took {took:?}");
}

#[test]
fn c01_isotropy() {
    const TOL: f64 = 0.05;
    let t = Instant::now();
    let u = thin_qr(&gaussian_matrix(200, 8, 1)).unwrap().q;
    let r = check_isotropy_in_basis(&u, &LessConfig::leverage(1, 8.0, 0), 100_000, 1);
    let pass = r.statistic <= TOL;
    report(1, pass, format!("max |mean(xx^T) - I| = {:.3e} <= {TOL}", r.statistic));
    within(1, t, Duration::from_secs(60));
    assert!(pass);
}

#[test]
fn c02_leverage_sum() {
    const TOL: f64 = 1e-9;
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let n = 50 + (derive_seed(k, &[0]) % 451) as usize;
        let d = 1 + (derive_seed(k, &[1]) % 20) as usize;
        let l = exact_leverage_scores(&gaussian_matrix(n, d, k)).unwrap();
        worst = worst.max((l.sum() - d as f64).abs());
    }
    let pass = worst <= TOL;
    report(2, pass, format!("max |sum l_i - d| = {worst:.2e} <= {TOL:e} over 20 matrices"));
    assert!(pass);
}

#[test]
fn c03_pcg_matches_exact() {
    const TOL: f64 = 1e-8;
    let (mut worst, mut max_iters) = (0.0f64, 0);
    for k in 0..20u64 {
        let a = gaussian_matrix(200, 15, 100 + k);
        let b = DenseVector::new(gaussian_matrix(200, 1, 200 + k).into_vec()).unwrap();
        let p = invert_upper(&qr_r_owned(a.clone()).unwrap()).unwrap();
        let sol = pcg_normal(&a, &b, &p, DEFAULT_PCG_TOL, 60).unwrap();
        let exact = lstsq_exact(&a, &b).unwrap();
        worst = worst.max(sol.x.sub(&exact).norm() / exact.norm());
        max_iters = max_iters.max(sol.iterations);
    }
    let pass = worst <= TOL && max_iters <= 17;
    report(3, pass, format!("relative gap {worst:.2e} <= {TOL:e}, iterations {max_iters} <= d+2 = 17"));
    assert!(pass);
}

#[test]
fn c04_subspace_embedding() {
    let a = gaussian_matrix(2000, 10, 1);
    let r = check_subspace_embedding(&a, &LessConfig::leverage(80, 8.0, 0), 0.5, 200, 1).unwrap();
    let control = check_subspace_embedding(&a, &LessConfig::leverage(10, 8.0, 0), 0.5, 200, 2).unwrap();
    let pass = r.passed && !control.passed;
    report(
        4,
        pass,
        format!(
            "failure rate {:.3} <= 0.05 at m=80; control m=d rate {:.3} must exceed 0.05",
            r.statistic, control.statistic
        ),
    );
    assert!(pass);
}

#[test]
fn c05_inversion_bias() {
    let a = gaussian_matrix(1000, 8, 1);
    let r = check_inversion_bias(&a, 80, 8.0, 5000, 1).unwrap();
    report(5, r.passed, format!("|mean Q_gamma - inv| / |mean Q - inv| = {:.3} <= 0.5", r.statistic));
    assert!(r.passed);
}

fn bias_problem() -> (DenseMatrix, DenseVector) {
    let p = SynthSpec::new(2000, 16).noise(1.0).seed(1).generate().unwrap();
    (p.a, p.b)
}

fn show(rows: &[McReport]) {
    for r in rows {
        println!("  {r}");
    }
}

#[test]
fn c06_bias_sparsity() {
    let t = Instant::now();
    let (a, b) = bias_problem();
    let rows = check_ls_bias(&a, &b, 96, &[1.0, 16.0], 4000, 1).unwrap();
    show(&rows);
    let s16 = rows.iter().find(|r| r.claim_id.contains("s=16")).unwrap();
    report(6, s16.passed, format!("bias(s=16) {:.3e} <= bias(s=1) + 2SE = {:.3e}", s16.statistic, s16.reference));
    within(6, t, Duration::from_secs(600));
    assert!(s16.passed);
}

#[test]
fn c07_bias_m_scaling() {
    let (a, b) = bias_problem();
    let rows = check_ls_bias_m_scaling(&a, &b, 64, 8.0, 4000, 1).unwrap();
    show(&rows);
    let r = rows.last().unwrap();
    report(7, r.passed, format!("bias(128) {:.3e} <= 0.5 bias(64) + 2SE = {:.3e}", r.statistic, r.reference));
    assert!(r.passed);
}

fn free_lunch_rows() -> &'static [ExperimentRow] {
    static ROWS: std::sync::OnceLock<Vec<ExperimentRow>> = std::sync::OnceLock::new();
    ROWS.get_or_init(|| {
        let t = Instant::now();
        let p = SynthSpec::new(2000, 20).row_tail(1.5).seed(1).generate().unwrap();
        let cfg = ExperimentConfig {
            q_grid: vec![1, 4, 16, 64, 256],
            configs: default_configs(512, 4).unwrap(),
            repeats: 100,
            mode: Mode::Lessuniform,
            seed: 1,
        };
        let rows = experiment_averaging(&p.a, &p.b, &cfg).unwrap();
        for r in &rows {
            println!("  m={:>3} nnz={:>2} q={:>3} err={:.4e} se={:.1e}", r.m, r.nnz, r.q, r.mean_rel_err, r.stderr);
        }
        within(8, t, Duration::from_secs(1200));
        rows
    })
}

fn err_at(rows: &[ExperimentRow], m: usize, q: usize) -> f64 {
    rows.iter().find(|r| r.m == m && r.q == q).unwrap().mean_rel_err
}

#[test]
fn c08_free_lunch() {
    let rows = free_lunch_rows();
    let big = rows.iter().map(|r| r.m).max().unwrap();
    let small = rows.iter().map(|r| r.m).min().unwrap();
    let a_ratio = err_at(rows, big, 1) / err_at(rows, small, 1);
    let plateau: Vec<f64> = rows.iter().filter(|r| r.q == 256).map(|r| r.mean_rel_err).collect();
    let spread = plateau.iter().cloned().fold(0.0, f64::max) / plateau.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = a_ratio <= 0.5 && spread <= 2.0;
    report(8, pass, format!("(a) q=1 error ratio m={big}/m={small} {a_ratio:.3} <= 0.5; (b) q=256 spread {spread:.3} <= 2"));
    assert!(pass);
}

#[test]
fn c09_averaging_decay() {
    let rows = free_lunch_rows();
    let big = rows.iter().map(|r| r.m).max().unwrap();
    let ratio = err_at(rows, big, 4) / err_at(rows, big, 1);
    let pass = ratio <= 0.4;
    report(9, pass, format!("m={big}: err(q=4)/err(q=1) = {ratio:.3} <= 0.4"));
    assert!(pass);
}

#[test]
fn c10_two_pass_contracts() {
    let p = SynthSpec::new(2000, 20).seed(2).generate().unwrap();
    let cfg = LessConfig::leverage(120, 8.0, 0);
    let run = |threads| {
        let opts = TwoPassOptions {
            threads: Some(threads),
            ..Default::default()
        };
        run_two_pass_with(&p.a, &p.b, 16, &cfg, 9, &opts).unwrap()
    };
    let (par, seq) = (run(4), run(1));
    let cap = space_cap(120, 20, 40);
    let ledgers_ok = par
        .per_machine
        .iter()
        .all(|l| l.passes == 2 && l.words_communicated == 20 && l.peak_words <= cap);
    let identical = par.x_hat == seq.x_hat
        && par.estimates.iter().zip(&seq.estimates).all(|(x, y)| x.x == y.x)
        && par.per_machine == seq.per_machine;
    let peak = par.per_machine.iter().map(|l| l.peak_words).max().unwrap();
    let pass = ledgers_ok && identical;
    report(
        10,
        pass,
        format!("passes=2, uplink=d, peak {peak} <= cap {cap}: {ledgers_ok}; parallel == sequential: {identical}"),
    );
    assert!(pass);
}

#[test]
fn c11_variance_contract() {
    let p = SynthSpec::new(1000, 10).noise(1.0).seed(1).generate().unwrap();
    let r = check_variance_contract(&p.a, &p.b, &LessConfig::leverage(60, 8.0, 0), 2000, 1, 2.5).unwrap();
    report(11, r.passed, format!("mean |Ax - b|^2 / L* = {:.4} <= 2.5", r.statistic));
    assert!(r.passed);
}

#[test]
fn c12_scaling_rules() {
    let mut pass = true;
    for claim in [Claim::MomentScaling, Claim::SparsifierNorm, Claim::TraceConcentration] {
        for r in run_claim(claim, 8, 2000, 7).unwrap() {
            let control = r.claim_id.contains("/control");
            let ok = r.passed != control;
            pass &= ok;
            println!("  {} {r}", if control { "control" } else { "check  " });
        }
    }
    report(12, pass, "every scaling check passes and every negative control fails".into());
    assert!(pass);
}
