#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sedfuse::assignment::hungarian_assign;
use sedfuse::postproc::median_filter;
use sedfuse::psds::{default_thresholds, PsdsEvaluator, PsdsParams};

fn hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian_assign");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (rows, cols) in [(10, 20), (50, 100), (200, 200)] {
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random::<f64>()).collect())
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}")), &cost, |b, cost| {
            b.iter(|| hungarian_assign(black_box(cost)).unwrap())
        });
    }
    group.finish();
}

/// Noisy scores over `clips` one-minute clips, 10 classes, hop 0.1 s.
fn psds(c: &mut Criterion) {
    let mut group = c.benchmark_group("psds_evaluate");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (classes, hop, dur) = (10, 0.1, 60.0);
    let frames = (dur / hop) as usize;
    for clips in [10usize, 50] {
        let names: Vec<String> = (0..clips).map(|i| format!("clip{i}")).collect();
        let mut layout = Vec::new();
        let mut rows = Vec::new();
        for name in &names {
            let mut events = Vec::new();
            let mut probs = vec![vec![0.0; frames]; classes];
            for _ in 0..4 {
                let class = rng.random_range(0..classes);
                let on = rng.random_range(0.0..dur - 5.0);
                let off = on + rng.random_range(0.5..5.0);
                events.push((class, on, off));
                probs[class][(on / hop) as usize..(off / hop) as usize].fill(0.6);
            }
            for row in &mut probs {
                for p in row.iter_mut() {
                    *p = (*p + rng.random_range(0.0..0.4f64)).min(1.0);
                }
            }
            layout.push((name.as_str(), dur, events));
            rows.push((name.as_str(), probs));
        }
        let ds = common::dataset(&layout, classes);
        let scores = common::bundle("m", hop, rows);
        for (label, thresholds) in [("50thr", 50), ("200thr", 200)] {
            let eval = PsdsEvaluator::new(&ds, PsdsParams::psds1(), default_thresholds(thresholds)).unwrap();
            group.bench_function(BenchmarkId::new(label, clips), |b| b.iter(|| eval.evaluate(black_box(&scores)).unwrap()));
        }
    }
    group.finish();
}

fn median(c: &mut Criterion) {
    let mut group = c.benchmark_group("median_filter");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let row: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    for window in [3usize, 15, 51] {
        group.bench_with_input(BenchmarkId::from_parameter(window), &window, |b, &w| {
            b.iter(|| median_filter(black_box(&row), w).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, hungarian, psds, median);
criterion_main!(benches);
