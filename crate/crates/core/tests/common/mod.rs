//! Brute-force oracles and fixture builders shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use sedfuse::dataio::{Dataset, EventTable, LabeledEvent, ScoreBundle};
use sedfuse::psds::PsdsParams;
use sedfuse::FrameGrid;

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("c{c}")).collect()
}

/// `(clip, duration, [(class, onset, offset)])` rows to a dataset.
/// `(clip, duration, [(class, onset, offset)])`.
pub type ClipSpec<'a> = (&'a str, f64, Vec<(usize, f64, f64)>);

pub fn dataset(clips: &[ClipSpec], num_classes: usize) -> Dataset {
    let names = class_names(num_classes);
    let mut table = EventTable::new();
    let mut durations = BTreeMap::new();
    for (clip, dur, events) in clips {
        durations.insert(clip.to_string(), *dur);
        table.insert(
            clip.to_string(),
            events
                .iter()
                .map(|&(c, on, off)| LabeledEvent {
                    label: names[c].clone(),
                    onset_s: on,
                    offset_s: off,
                })
                .collect(),
        );
    }
    Dataset::new(&table, durations, Some(names)).unwrap()
}

/// Bundle from `clip -> [class][frame]` rows.
pub fn bundle(model: &str, hop: f64, rows: Vec<(&str, Vec<Vec<f64>>)>) -> ScoreBundle {
    let grids = rows
        .into_iter()
        .map(|(clip, probs)| (clip.to_string(), FrameGrid::new(clip, hop, probs).unwrap()))
        .collect();
    ScoreBundle::new(model, hop, grids).unwrap()
}

/// Minimum assignment cost by exhaustive search over injective maps.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    if cost.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost[0].len()], 0.0, &mut best);
    best
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Straight-from-the-definitions PSDS: returns `(overall, per_class)`.
pub fn brute_force_psds(ds: &Dataset, scores: &ScoreBundle, thresholds: &[f64], p: &PsdsParams) -> (f64, Vec<f64>) {
    let n_classes = ds.class_names.len();
    let hours: f64 = ds.durations.values().sum::<f64>() / 3600.0;
    let gt_of = |clip: &str, c: usize| -> Vec<(f64, f64)> {
        ds.ground_truth[clip]
            .events
            .iter()
            .filter(|e| e.class_id == c)
            .map(|e| (e.onset_s, e.offset_s))
            .collect()
    };
    let n_gt: Vec<usize> = (0..n_classes)
        .map(|c| ds.ground_truth.keys().map(|k| gt_of(k, c).len()).sum())
        .collect();

    // points[c] = (efpr, tp_ratio) per threshold
    let mut points = vec![Vec::new(); n_classes];
    for &th in thresholds {
        for c in 0..n_classes {
            let (mut tp, mut fp, mut ct) = (0usize, 0usize, 0usize);
            for (clip, &dur) in &ds.durations {
                let row = &scores.grids[clip.as_str()].probs[c];
                let hop = scores.hop_s;
                let mut dets = Vec::new();
                let mut start = None;
                for t in 0..=row.len() {
                    let on = t < row.len() && row[t] >= th;
                    match (on, start) {
                        (true, None) => start = Some(t),
                        (false, Some(s)) => {
                            let off = (t as f64 * hop).min(dur);
                            if s as f64 * hop < off {
                                dets.push((s as f64 * hop, off));
                            }
                            start = None;
                        }
                        _ => {}
                    }
                }
                let gts = gt_of(clip, c);
                let dtc: Vec<bool> = dets
                    .iter()
                    .map(|&d| gts.iter().map(|&g| overlap(d, g)).sum::<f64>() / (d.1 - d.0) >= p.rho_dtc)
                    .collect();
                let gtc: Vec<bool> = gts
                    .iter()
                    .map(|&g| {
                        let cov: f64 = dets
                            .iter()
                            .zip(&dtc)
                            .filter(|x| *x.1)
                            .map(|(&d, _)| overlap(d, g))
                            .sum();
                        cov / (g.1 - g.0) >= p.rho_gtc
                    })
                    .collect();
                tp += gtc.iter().filter(|&&x| x).count();
                for (k, &d) in dets.iter().enumerate() {
                    let hit = dtc[k] && gts.iter().zip(&gtc).any(|(&g, &ok)| ok && overlap(d, g) > 0.0);
                    if hit {
                        continue;
                    }
                    fp += 1;
                    for other in 0..n_classes {
                        if other == c {
                            continue;
                        }
                        let cov: f64 = gt_of(clip, other).iter().map(|&g| overlap(d, g)).sum();
                        if cov / (d.1 - d.0) >= p.rho_cttc {
                            ct += 1;
                        }
                    }
                }
            }
            let ct_term = if n_classes > 1 {
                p.alpha_ct * ct as f64 / (n_classes - 1) as f64
            } else {
                0.0
            };
            let efpr = (fp as f64 + ct_term) / hours;
            points[c].push((efpr, tp as f64 / n_gt[c].max(1) as f64));
        }
    }

    let envelope = |c: usize, e: f64| -> f64 {
        points[c]
            .iter()
            .filter(|pt| pt.0 <= e)
            .map(|pt| pt.1)
            .fold(0.0, f64::max)
    };
    let mut xs: Vec<f64> = points
        .iter()
        .flatten()
        .map(|pt| pt.0)
        .filter(|&e| e < p.e_max)
        .chain([0.0, p.e_max])
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let active: Vec<usize> = (0..n_classes).filter(|&c| n_gt[c] > 0).collect();
    let mut overall = 0.0;
    let mut per_class = vec![0.0; n_classes];
    for w in xs.windows(2) {
        let width = w[1] - w[0];
        for &c in &active {
            per_class[c] += envelope(c, w[0]) * width;
        }
        if !active.is_empty() {
            let vals: Vec<f64> = active.iter().map(|&c| envelope(c, w[0])).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            overall += (mu - p.alpha_st * sd).max(0.0) * width;
        }
    }
    (overall / p.e_max, per_class.into_iter().map(|a| a / p.e_max).collect())
}

/// A random micro evaluation set: at most 3 clips, 2 classes, 5 thresholds.
pub struct MicroCase {
    pub dataset: Dataset,
    pub scores: ScoreBundle,
    pub thresholds: Vec<f64>,
    pub params: PsdsParams,
}

pub fn micro_case(rng: &mut impl Rng) -> MicroCase {
    let hop = 0.5;
    let n_classes = rng.random_range(1..=2);
    let n_clips = rng.random_range(1..=3);
    let mut clips = Vec::new();
    let mut rows = Vec::new();
    let names: Vec<String> = (0..n_clips).map(|i| format!("clip{i}")).collect();
    for name in &names {
        let dur = rng.random_range(6..=16) as f64 * hop;
        let mut events = Vec::new();
        for c in 0..n_classes {
            for _ in 0..rng.random_range(0..=2) {
                let len = rng.random_range(0.3..dur / 2.0);
                let on = rng.random_range(0.0..dur - len);
                events.push((c, on, on + len));
            }
        }
        let frames = (dur / hop).round() as usize;
        let levels = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
        let probs: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| (0..frames).map(|_| levels[rng.random_range(0..levels.len())]).collect())
            .collect();
        clips.push((name.as_str(), dur, events));
        rows.push((name.as_str(), probs));
    }
    let ds = dataset(&clips, n_classes);
    let scores = bundle("m", hop, rows);
    let mut thresholds: Vec<f64> = (0..rng.random_range(1..=5))
        .map(|_| rng.random_range(0.01..0.99))
        .collect();
    thresholds.sort_by(f64::total_cmp);
    let params = PsdsParams {
        rho_dtc: rng.random_range(0.05..1.0),
        rho_gtc: rng.random_range(0.05..1.0),
        rho_cttc: rng.random_range(0.05..1.0),
        alpha_ct: rng.random_range(0.0..1.0),
        alpha_st: rng.random_range(0.0..2.0),
        e_max: [100.0, 1000.0, 5000.0][rng.random_range(0..3)],
    };
    MicroCase {
        dataset: ds,
        scores,
        thresholds,
        params,
    }
}

/// Two-class dev set where model A is accurate only on class 0 and model B
/// only on class 1.
pub fn complementary_models() -> (Dataset, ScoreBundle, ScoreBundle) {
    let hop = 1.0;
    let ds = dataset(
        &[
            ("x", 20.0, vec![(0, 2.0, 6.0), (1, 10.0, 15.0)]),
            ("y", 20.0, vec![(0, 12.0, 17.0), (1, 1.0, 4.0)]),
        ],
        2,
    );
    let clean = |ds: &Dataset, clip: &str, c: usize| -> Vec<f64> {
        let g = sedfuse::events::rasterize(&ds.ground_truth[clip], hop, 2).unwrap();
        g.probs[c].iter().map(|&v| if v > 0.0 { 0.9 } else { 0.05 }).collect()
    };
    // noisy row: misses the event and fires elsewhere
    let noisy = |clip: &str| -> Vec<f64> {
        (0..20)
            .map(|t| match (clip, t) {
                ("x", 0..=2) | ("y", 6..=9) => 0.8,
                _ => 0.1,
            })
            .collect()
    };
    let a = bundle(
        "A",
        hop,
        vec![
            ("x", vec![clean(&ds, "x", 0), noisy("x")]),
            ("y", vec![clean(&ds, "y", 0), noisy("y")]),
        ],
    );
    let b = bundle(
        "B",
        hop,
        vec![
            ("x", vec![noisy("x"), clean(&ds, "x", 1)]),
            ("y", vec![noisy("y"), clean(&ds, "y", 1)]),
        ],
    );
    (ds, a, b)
}

/// Three classes; class 0's scores carry single-frame impulses that a median
/// filter of length 3 or more removes, the other classes are clean.
pub fn impulse_noise_case() -> (Dataset, ScoreBundle) {
    let hop = 1.0;
    let ds = dataset(
        &[("z", 40.0, vec![(0, 10.0, 20.0), (1, 5.0, 15.0), (2, 25.0, 35.0)])],
        3,
    );
    let grid = sedfuse::events::rasterize(&ds.ground_truth["z"], hop, 3).unwrap();
    let mut probs: Vec<Vec<f64>> = grid
        .probs
        .iter()
        .map(|r| r.iter().map(|&v| if v > 0.0 { 0.8 } else { 0.02 }).collect())
        .collect();
    for t in [2, 5, 24, 28, 31, 37] {
        probs[0][t] = 0.95;
    }
    (ds, bundle("noisy", hop, vec![("z", probs)]))
}
