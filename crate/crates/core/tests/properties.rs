use proptest::prelude::*;

use less_core::leverage::exact_leverage_scores;
use less_core::matrix::lstsq_exact;
use less_core::rng::gaussian_matrix;
use less_core::solver::LossOracle;
use less_core::synth::SynthSpec;
use less_core::{DenseMatrix, DenseVector, LessConfig, SketchAccumulator};

fn sketch(a: &DenseMatrix, b: &DenseVector, cfg: &LessConfig) -> SketchAccumulator {
    let scores = exact_leverage_scores(a).unwrap();
    let mut acc = SketchAccumulator::new(cfg.clone(), a.cols()).unwrap();
    acc.ingest_all(a, b, scores.scores()).unwrap();
    acc
}

fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
    let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
    x.iter().zip(y).all(|(u, v)| (u - v).abs() <= tol * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn column_permutation_permutes_solution(seed in 0u64..1000, rot in 1usize..5) {
        let p = SynthSpec::new(120, 5).seed(seed).generate().unwrap();
        let perm: Vec<usize> = (0..5).map(|j| (j + rot) % 5).collect();
        let cfg = LessConfig::leverage(30, 4.0, seed);
        let x = lstsq_exact(sketch(&p.a, &p.b, &cfg).sa(), sketch(&p.a, &p.b, &cfg).sb()).unwrap();
        let ap = p.a.permute_columns(&perm);
        let acc = sketch(&ap, &p.b, &cfg);
        let xp = lstsq_exact(acc.sa(), acc.sb()).unwrap();
        let expect: Vec<f64> = perm.iter().map(|&j| x[j]).collect();
        prop_assert!(close(xp.as_slice(), &expect, 1e-8));
    }

    #[test]
    fn leverage_scores_depend_only_on_column_space(seed in 0u64..1000) {
        let a = gaussian_matrix(60, 4, seed);
        let mut r = gaussian_matrix(4, 4, seed + 7);
        for i in 0..4 {
            r.row_mut(i)[i] += 4.0;
        }
        let l1 = exact_leverage_scores(&a).unwrap();
        let l2 = exact_leverage_scores(&a.matmul(&r).unwrap()).unwrap();
        prop_assert!(close(l1.scores(), l2.scores(), 1e-9));
        prop_assert!((l1.sum() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn loss_splits_into_optimum_plus_excess(seed in 0u64..1000, shift in -3.0f64..3.0) {
        let p = SynthSpec::new(80, 3).seed(seed).generate().unwrap();
        let oracle = LossOracle::new(&p.a, &p.b).unwrap();
        let x: Vec<f64> = oracle.x_star().as_slice().iter().enumerate().map(|(i, v)| v + shift * (i as f64 + 1.0)).collect();
        let x = DenseVector::new(x).unwrap();
        let lhs = oracle.loss(&x).unwrap();
        let rhs = oracle.optimal_loss() + oracle.excess_loss(&x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
    }

    #[test]
    fn same_seed_same_sketch(seed in 0u64..1000) {
        let p = SynthSpec::new(100, 4).seed(seed).generate().unwrap();
        let cfg = LessConfig::leverage(24, 3.0, seed ^ 0xabc);
        let s1 = sketch(&p.a, &p.b, &cfg);
        let s2 = sketch(&p.a, &p.b, &cfg);
        prop_assert_eq!(s1.sa(), s2.sa());
        prop_assert_eq!(s1.sb(), s2.sb());
    }

    #[test]
    fn solution_scales_with_response(seed in 0u64..1000, c in 0.1f64..50.0) {
        let p = SynthSpec::new(100, 4).seed(seed).generate().unwrap();
        let cfg = LessConfig::leverage(30, 4.0, seed);
        let base = sketch(&p.a, &p.b, &cfg);
        let x = lstsq_exact(base.sa(), base.sb()).unwrap();
        let cb = DenseVector::new(p.b.as_slice().iter().map(|v| c * v).collect()).unwrap();
        let scaled = sketch(&p.a, &cb, &cfg);
        let xc = lstsq_exact(scaled.sa(), scaled.sb()).unwrap();
        let expect: Vec<f64> = x.as_slice().iter().map(|v| c * v).collect();
        prop_assert!(close(xc.as_slice(), &expect, 1e-9));
        let mut ca = p.a.clone();
        ca.scale(c);
        let both = sketch(&ca, &cb, &cfg);
        prop_assert!(close(lstsq_exact(both.sa(), both.sb()).unwrap().as_slice(), x.as_slice(), 1e-9));
    }
}
