use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use less_core::distributed::{run_two_pass_with, TwoPassOptions};
use less_core::rng::derive_seed;
use less_core::solver::LossOracle;
use less_core::verify::{run_claim, Claim, McReport};
use less_core::SketchAccumulator;

use crate::error::CliError;
use crate::experiment::{
    default_configs, default_q_grid, experiment_averaging, write_rows, ExperimentConfig, Mode,
};
use crate::source::{load, parse_synthetic, DataSource};

#[derive(Debug, Parser)]
#[command(name = "less", version, about = "Leverage score sparsified sketching for least squares")]
#[command(propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-pass distributed solve: average one sketched estimate per machine.
    Solve(SolveArgs),
    /// Build one sketch (SA | Sb) and write it as CSV.
    Sketch(SketchArgs),
    /// Run Monte Carlo checks and print their reports as CSV.
    Verify(VerifyArgs),
    /// Averaging experiment across sketch shapes sharing one budget.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// libsvm file.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Feature count for --dataset (default: largest index).
    #[arg(long, value_name = "INT", requires = "dataset")]
    d_hint: Option<usize>,
    /// Synthetic problem, `k=v,...` over n, d, noise, cond, seed, tail.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
    /// Keep only the first N rows.
    #[arg(long, value_name = "N")]
    truncate: Option<usize>,
    /// Skip scaling columns to unit norm.
    #[arg(long)]
    no_standardize: bool,
}

impl SourceArgs {
    fn source(&self) -> Result<DataSource, CliError> {
        match (&self.dataset, &self.synthetic) {
            (Some(path), None) => Ok(DataSource::Dataset {
                path: path.clone(),
                d_hint: self.d_hint,
            }),
            (None, Some(spec)) => Ok(DataSource::Synthetic(parse_synthetic(spec)?)),
            (None, None) => Err(CliError::Usage("one of --dataset or --synthetic is required".into())),
            (Some(_), Some(_)) => Err(CliError::Usage("--dataset and --synthetic are exclusive".into())),
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Sketch rows per machine (default 6d).
    #[arg(long)]
    m: Option<usize>,
    /// Target nonzeros per sketch row.
    #[arg(long, default_value_t = 8)]
    nnz: usize,
    #[arg(long, value_enum, default_value_t = Mode::Less)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    machines: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the averaged solution here as CSV.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SketchArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 8)]
    nnz: usize,
    #[arg(long, value_enum, default_value_t = Mode::Less)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Claim name, or `all`.
    #[arg(long, default_value = "all")]
    claim: String,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Sketching budget m·nnz shared by every configuration.
    #[arg(long, default_value_t = 512)]
    budget: usize,
    /// Number of (m, nnz) configurations: nnz = 2, 4, 8, ...
    #[arg(long, default_value_t = 4)]
    configs: usize,
    /// Largest machine count; the grid is 1, 4, 16, ... up to it.
    #[arg(long, default_value_t = 256)]
    qmax: usize,
    /// Explicit machine-count grid, overriding --qmax.
    #[arg(long, value_delimiter = ',')]
    q_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, value_enum, default_value_t = Mode::Lessuniform)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Data(crate::error::DataError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct ReportRow<'a> {
    claim_id: &'a str,
    trials: usize,
    statistic: f64,
    reference: f64,
    passed: bool,
    stderr: f64,
}

pub fn write_reports<W: Write>(out: W, reports: &[McReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ReportRow {
            claim_id: &r.claim_id,
            trials: r.trials,
            statistic: r.statistic,
            reference: r.reference,
            passed: r.passed,
            stderr: r.stderr,
        })?;
    }
    if reports.is_empty() {
        w.write_record(less_core::verify::REPORT_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let claims: Vec<Claim> = if args.claim.eq_ignore_ascii_case("all") {
        Claim::ALL.to_vec()
    } else {
        vec![args.claim.parse()?]
    };
    let mut reports = Vec::new();
    for c in claims {
        reports.extend(run_claim(c, args.d, args.trials, args.seed).map_err(|e| CliError::from(e).context(c.name()))?);
    }
    for r in reports.iter().filter(|r| r.excluded > 0) {
        eprintln!("{}: {} of {} trials trimmed", r.claim_id, r.excluded, r.trials);
    }
    write_reports(output(args.out.as_deref())?, &reports)
}

fn run_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    let source = args.source.source()?;
    let standardize = !args.source.no_standardize;
    let (a, b) = load(&source, args.source.truncate, standardize)?;
    let cfg = ExperimentConfig {
        q_grid: args.q_grid.clone().unwrap_or_else(|| default_q_grid(args.qmax)),
        configs: default_configs(args.budget, args.configs)?,
        repeats: args.repeats,
        mode: args.mode,
        seed: args.seed,
    };
    let rows = experiment_averaging(&a, &b, &cfg)?;
    write_rows(output(args.out.as_deref())?, &rows)?;
    if let Some(path) = &args.out {
        let mut meta = path.clone().into_os_string();
        meta.push(".meta");
        let mut f = output(Some(Path::new(&meta)))?;
        writeln!(f, "source={}", source.describe())?;
        writeln!(f, "rows={} cols={}", a.rows(), a.cols())?;
        writeln!(f, "truncate={}", args.source.truncate.map_or("none".into(), |t| t.to_string()))?;
        writeln!(f, "standardized={standardize}")?;
        writeln!(f, "mode={:?}", args.mode)?;
        writeln!(f, "budget={} configs={}", args.budget, args.configs)?;
        writeln!(f, "q_grid={:?}", cfg.q_grid)?;
    }
    Ok(())
}

fn run_solve(args: &SolveArgs) -> Result<(), CliError> {
    let (a, b) = load(&args.source.source()?, args.source.truncate, !args.source.no_standardize)?;
    let (n, d) = a.shape();
    let m = args.m.unwrap_or(6 * d);
    let cfg = args.mode.config(m, args.nnz, n, 0);
    let res = run_two_pass_with(&a, &b, args.machines, &cfg, args.seed, &TwoPassOptions::default())?;
    let oracle = LossOracle::new(&a, &b)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "index,value")?;
    for (i, v) in res.x_hat.as_slice().iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    out.flush()?;
    let peak = res.per_machine.iter().map(|l| l.peak_words).max().unwrap_or(0);
    eprintln!(
        "machines={} m={m} passes={} peak_words={peak} cap={} rel_err={}",
        res.q,
        res.per_machine[0].passes,
        res.space_cap,
        oracle
            .relative_excess_loss(&res.x_hat)
            .map_or_else(|_| "undefined".to_string(), |r| r.to_string())
    );
    Ok(())
}

fn run_sketch(args: &SketchArgs) -> Result<(), CliError> {
    let (a, b) = load(&args.source.source()?, args.source.truncate, !args.source.no_standardize)?;
    let (n, d) = a.shape();
    let cfg = args.mode.config(args.m.unwrap_or(6 * d), args.nnz, n, derive_seed(args.seed, &[2]));
    let scores = crate::experiment::scores_for(&a, &cfg, args.seed)?;
    let mut acc = SketchAccumulator::new(cfg, d)?;
    acc.ingest_all(&a, &b, &scores)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    let mut header: Vec<String> = (0..d).map(|j| format!("sa{j}")).collect();
    header.push("sb".into());
    w.write_record(&header)?;
    for (i, row) in acc.sa().row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(acc.sb()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse `argv` (including the program name) and run; returns the exit
/// code: 0 success, 1 usage, 2 data, 3 numerical.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Sketch(a) => run_sketch(a),
        Command::Verify(a) => run_verify(a),
        Command::Experiment(a) => run_experiment(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("less: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `less --help` for usage");
            }
            e.exit_code()
        }
    }
}
