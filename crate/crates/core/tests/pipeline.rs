mod common;

use std::collections::BTreeMap;

use sedfuse::dataio::ScoreBundle;
use sedfuse::events::rasterize;
use sedfuse::fusion::{compute_weights, fuse};
use sedfuse::postproc::{apply_to_bundle, mean_filter, median_filter, tune_windows, window_objective, WindowConfig, WindowSearch};
use sedfuse::psds::{default_thresholds, PsdsEvaluator, PsdsParams};
use sedfuse::FrameGrid;

fn perfect_and_empty() -> (sedfuse::dataio::Dataset, ScoreBundle, ScoreBundle) {
    let hop = 0.5;
    let ds = common::dataset(
        &[
            ("a", 10.0, vec![(0, 1.0, 3.0), (1, 2.5, 6.0), (0, 7.0, 9.5)]),
            ("b", 8.0, vec![(1, 0.0, 2.0)]),
        ],
        2,
    );
    let mut perfect = BTreeMap::new();
    let mut empty = BTreeMap::new();
    for (clip, set) in &ds.ground_truth {
        let g = rasterize(set, hop, 2).unwrap();
        empty.insert(clip.clone(), FrameGrid::zeros(clip.as_str(), hop, 2, g.num_frames()));
        perfect.insert(clip.clone(), g);
    }
    (
        ds,
        ScoreBundle::new("perfect", hop, perfect).unwrap(),
        ScoreBundle::new("empty", hop, empty).unwrap(),
    )
}

#[test]
fn perfect_detector_scores_one_and_empty_zero() {
    let (ds, perfect, empty) = perfect_and_empty();
    for params in [PsdsParams::psds1(), PsdsParams::psds2()] {
        let eval = PsdsEvaluator::new(&ds, params, default_thresholds(50)).unwrap();
        let r = eval.evaluate(&perfect).unwrap();
        assert_eq!(r.overall, 1.0);
        assert!(r.per_class.iter().all(|&v| v == 1.0));
        let r = eval.evaluate(&empty).unwrap();
        assert_eq!(r.overall, 0.0);
        assert!(r.per_class.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn fusion_of_complementary_models_beats_both() {
    let (ds, a, b) = common::complementary_models();
    let eval = PsdsEvaluator::new(&ds, PsdsParams::psds1(), default_thresholds(20)).unwrap();
    let ra = eval.evaluate(&a).unwrap();
    let rb = eval.evaluate(&b).unwrap();
    let w = compute_weights(&[ra.per_class.clone(), rb.per_class.clone()]).unwrap();
    for c in 0..2 {
        let s: f64 = w.weights.iter().map(|m| m[c]).sum();
        assert!((s - 1.0).abs() <= 1e-9);
    }
    let fused = fuse(&[a.clone(), b.clone()], &w, "fused").unwrap();
    for (clip, g) in &fused.grids {
        for c in 0..2 {
            for t in 0..g.num_frames() {
                let (x, y) = (a.grids[clip].probs[c][t], b.grids[clip].probs[c][t]);
                let v = g.probs[c][t];
                assert!(v >= x.min(y) - 1e-12 && v <= x.max(y) + 1e-12);
            }
        }
    }
    let rf = eval.evaluate(&fused).unwrap();
    assert!(rf.overall >= ra.overall.max(rb.overall));
    assert!(rf.overall > ra.overall.max(rb.overall), "construction should separate the models");

    let single = compute_weights(&[ra.per_class]).unwrap();
    assert_eq!(fuse(std::slice::from_ref(&a), &single, "A").unwrap().grids, a.grids);
}

#[test]
fn tuned_windows_remove_impulses() {
    let (ds, noisy) = common::impulse_noise_case();
    let eval = PsdsEvaluator::new(&ds, PsdsParams::psds1(), default_thresholds(20)).unwrap();
    let cfg = tune_windows(&eval, &noisy, &WindowSearch { search_max: 9, tune_mean: false }).unwrap();
    assert!(cfg.median_len[0] >= 3, "{cfg:?}");

    let before = eval.evaluate(&noisy).unwrap();
    let after = eval.evaluate(&apply_to_bundle(&noisy, &cfg).unwrap()).unwrap();
    assert!(after.per_class[0] > before.per_class[0]);

    // no class would do better with its filter switched off
    let tuned_pts = eval.all_class_points(&apply_to_bundle(&noisy, &cfg).unwrap()).unwrap();
    for c in 0..3 {
        let mut reset = cfg.clone();
        reset.median_len[c] = 1;
        reset.mean_len[c] = 1;
        let base_pts = eval.all_class_points(&apply_to_bundle(&noisy, &reset).unwrap()).unwrap();
        assert!(window_objective(&eval, &tuned_pts, c) >= window_objective(&eval, &base_pts, c));
    }
    assert_eq!(apply_to_bundle(&noisy, &WindowConfig::identity(3)).unwrap(), noisy);
}

#[test]
fn filter_unit_truths() {
    assert_eq!(median_filter(&[0.0, 1.0, 0.0, 1.0, 1.0], 3).unwrap(), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    let m = mean_filter(&[0.0, 1.0, 0.0], 3).unwrap();
    for v in m {
        assert!((v - 1.0 / 3.0).abs() <= 1e-15);
    }
    let row = [0.3, 0.9, 0.1, 0.5];
    assert_eq!(median_filter(&row, 1).unwrap(), row);
    assert_eq!(mean_filter(&row, 1).unwrap(), row);
}
