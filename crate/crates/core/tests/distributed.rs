use less_core::distributed::{run_two_pass_with, TwoPassOptions};
use less_core::solver::LossOracle;
use less_core::synth::SynthSpec;
use less_core::LessConfig;

#[test]
fn parallel_run_is_bit_identical_to_single_worker() {
    let p = SynthSpec::new(1000, 8).seed(3).generate().unwrap();
    let cfg = LessConfig::leverage(48, 4.0, 0);
    let run = |threads| {
        let opts = TwoPassOptions {
            threads: Some(threads),
            ..Default::default()
        };
        run_two_pass_with(&p.a, &p.b, 64, &cfg, 11, &opts).unwrap()
    };
    let (par, seq) = (run(8), run(1));
    assert_eq!(par.x_hat, seq.x_hat);
    assert_eq!(par.per_machine, seq.per_machine);
    assert!(par.per_machine.iter().all(|l| l.passes == 2 && l.peak_words <= par.space_cap));
}

#[test]
fn averaging_beats_the_typical_machine() {
    let p = SynthSpec::new(1000, 8).seed(4).generate().unwrap();
    let oracle = LossOracle::new(&p.a, &p.b).unwrap();
    let res = run_two_pass_with(&p.a, &p.b, 64, &LessConfig::leverage(48, 4.0, 0), 5, &TwoPassOptions::default())
        .unwrap();
    let mut single: Vec<f64> = res
        .estimates
        .iter()
        .map(|e| oracle.relative_excess_loss(&e.x).unwrap())
        .collect();
    single.sort_by(f64::total_cmp);
    let avg = oracle.relative_excess_loss(&res.x_hat).unwrap();
    assert!(avg < single[single.len() / 2] / 8.0, "avg {avg} median {}", single[32]);
}

#[test]
fn distinct_seeds_give_distinct_estimates() {
    let p = SynthSpec::new(400, 4).seed(6).generate().unwrap();
    let res = run_two_pass_with(&p.a, &p.b, 4, &LessConfig::leverage(24, 4.0, 0), 1, &TwoPassOptions::default())
        .unwrap();
    assert_ne!(res.estimates[0].x, res.estimates[1].x);
    assert!(res.per_machine.iter().all(|l| l.words_communicated == 4));
}
