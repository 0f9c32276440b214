mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sedfuse::assignment::hungarian_assign;
use sedfuse::psds::{psds_class, psds_overall, PsdsEvaluator, PsdsParams};

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.random_range(1..=7);
        let m = rng.random_range(n..=7);
        // small integer costs make ties common and sums exact
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-20..=20) as f64).collect())
            .collect();
        let r = hungarian_assign(&cost).unwrap();
        assert_eq!(r.total_cost, common::brute_force_assignment(&cost), "{cost:?}");
        let mut cols = r.assignment.clone();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), n);
    }
}

#[test]
fn psds_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut nonzero = 0;
    for case in 0..300 {
        let mc = common::micro_case(&mut rng);
        let eval = PsdsEvaluator::new(&mc.dataset, mc.params, mc.thresholds.clone()).unwrap();
        let report = eval.evaluate(&mc.scores).unwrap();
        let (overall, per_class) = common::brute_force_psds(&mc.dataset, &mc.scores, &mc.thresholds, &mc.params);
        assert!((report.overall - overall).abs() <= 1e-9, "case {case}: {} vs {overall}", report.overall);
        for (a, b) in report.per_class.iter().zip(&per_class) {
            assert!((a - b).abs() <= 1e-9, "case {case}: class {a} vs {b}");
        }
        if overall > 0.0 {
            nonzero += 1;
        }
    }
    assert!(nonzero > 30, "oracle cases are too degenerate ({nonzero} nonzero)");
}

#[test]
fn class_score_ignores_alpha_st_and_averages_overall() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mc = common::micro_case(&mut rng);
        let eval = PsdsEvaluator::new(&mc.dataset, mc.params, mc.thresholds.clone()).unwrap();
        let roc = eval.evaluate(&mc.scores).unwrap().roc;
        for c in 0..roc.num_classes() {
            let at = |a: f64| psds_class(&roc, c, &PsdsParams { alpha_st: a, ..mc.params }).to_bits();
            assert_eq!(at(0.0), at(1.0));
            assert_eq!(at(0.0), at(7.0));
        }
        let p0 = PsdsParams { alpha_st: 0.0, ..mc.params };
        let active: Vec<usize> = (0..roc.num_classes()).filter(|&c| roc.has_ground_truth[c]).collect();
        if active.is_empty() {
            continue;
        }
        let mean = active.iter().map(|&c| psds_class(&roc, c, &p0)).sum::<f64>() / active.len() as f64;
        assert!((psds_overall(&roc, &p0) - mean).abs() <= 1e-12);
    }
}
