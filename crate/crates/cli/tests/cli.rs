use std::process::Command;

use proptest::prelude::*;

use less_cli::experiment::{experiment_averaging, ExperimentConfig, Mode, SketchShape};
use less_cli::libsvm::{parse_libsvm_str, write_libsvm};
use less_core::synth::SynthSpec;
use less_core::{DenseMatrix, DenseVector};

fn less(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_less")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(less(&["--help"]).status.code(), Some(0));
    assert_eq!(less(&["--version"]).status.code(), Some(0));
    assert_eq!(less(&[]).status.code(), Some(1));
    assert_eq!(less(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(less(&["verify", "--claim", "nonsense"]).status.code(), Some(1));
    assert_eq!(less(&["solve", "--synthetic", "n=100,q=3"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.svm");
    assert_eq!(less(&["solve", "--dataset", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = dir.path().join("bad.svm");
    std::fs::write(&bad, "1 2:1 1:1\n").unwrap();
    let out = less(&["solve", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    // Three identical rows in two dimensions: rank deficient.
    let sing = dir.path().join("singular.svm");
    std::fs::write(&sing, "1 1:1 2:1\n2 1:1 2:1\n3 1:1 2:1\n4 1:2 2:2\n").unwrap();
    let out = less(&["solve", "--dataset", sing.to_str().unwrap(), "--no-standardize", "--m", "4", "--mode", "subsample"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_prints_solution_and_ledger() {
    let out = less(&["solve", "--synthetic", "n=400,d=5,seed=2", "--machines", "4", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 6);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("passes=2") && stderr.contains("rel_err="), "{stderr}");
}

#[test]
fn verify_isotropy_reports_csv() {
    let out = less(&["verify", "--claim", "isotropy", "--d", "4", "--trials", "4000", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        less_core::verify::REPORT_HEADER.to_vec()
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let main = rows.iter().find(|r| &r[0] == "isotropy").unwrap();
    assert_eq!(&main[4], "true");
    let control = rows.iter().find(|r| r[0].contains("/control")).unwrap();
    assert_eq!(&control[4], "false");
}

#[test]
fn experiment_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("exp.csv");
    let args = [
        "experiment",
        "--synthetic",
        "n=400,d=5,seed=4",
        "--budget",
        "64",
        "--configs",
        "2",
        "--qmax",
        "4",
        "--repeats",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ];
    assert_eq!(less(&args).status.code(), Some(0));
    let first = std::fs::read_to_string(&out_path).unwrap();
    let mut rdr = csv::Reader::from_reader(first.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        less_cli::experiment::CSV_HEADER.to_vec()
    );
    assert_eq!(rdr.records().count(), 4);
    let meta = std::fs::read_to_string(dir.path().join("exp.csv.meta")).unwrap();
    assert!(meta.contains("source=synthetic n=400"));
    assert_eq!(less(&args).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out_path).unwrap(), first);
}

#[test]
fn doubling_repeats_shrinks_stderr() {
    let p = SynthSpec::new(600, 6).seed(5).generate().unwrap();
    let cfg = |repeats| ExperimentConfig {
        q_grid: vec![1],
        configs: vec![SketchShape { m: 30, nnz: 4 }],
        repeats,
        mode: Mode::Less,
        seed: 8,
    };
    let se = |r| experiment_averaging(&p.a, &p.b, &cfg(r)).unwrap()[0].stderr;
    let ratio = se(400) / se(200);
    assert!((0.5..0.95).contains(&ratio), "stderr ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn libsvm_round_trip(
        rows in prop::collection::vec(
            (-1e6f64..1e6, prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], 4)),
            1..20,
        )
    ) {
        // Pin the last column so the inferred dimension is always 4.
        let data: Vec<f64> = rows.iter().flat_map(|(_, r)| {
            let mut r = r.clone();
            r[3] = 1.0;
            r
        }).collect();
        let a = DenseMatrix::from_row_major(rows.len(), 4, data).unwrap();
        let b = DenseVector::new(rows.iter().map(|r| r.0).collect()).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&mut buf, &a, &b).unwrap();
        let (a2, b2) = parse_libsvm_str(std::str::from_utf8(&buf).unwrap(), None, None).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }
}
