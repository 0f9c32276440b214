//! Median-then-mean smoothing of frame probabilities and the per-class
//! window-length search.
//!
//! Windows are odd frame counts centered on each frame; the row is extended
//! by repeating its first and last values.

use rayon::prelude::*;

use crate::dataio::ScoreBundle;
use crate::events::FrameGrid;
use crate::psds::{psds_class, psds_overall, PsdsEvaluator};
use crate::{Error, Result};

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(
            "window",
            format!("length {window} must be odd and >= 1"),
        ));
    }
    Ok(())
}

fn padded(row: &[f64], half: usize) -> impl Iterator<Item = f64> + '_ {
    let last = row.len() - 1;
    (0..row.len() + 2 * half).map(move |i| row[i.saturating_sub(half).min(last)])
}

/// Centered sliding median with edge replication.
pub fn median_filter(row: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window)?;
    if window == 1 || row.is_empty() {
        return Ok(row.to_vec());
    }
    let half = window / 2;
    let ext: Vec<f64> = padded(row, half).collect();
    let mut sorted: Vec<f64> = ext[..window].to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(row.len());
    out.push(sorted[half]);
    for t in 1..row.len() {
        let leaving = ext[t - 1];
        let pos = sorted
            .binary_search_by(|v| v.total_cmp(&leaving))
            .map_err(|_| Error::Invariant("median window lost a value".into()))?;
        sorted.remove(pos);
        let entering = ext[t + window - 1];
        let pos = sorted.partition_point(|v| v.total_cmp(&entering).is_lt());
        sorted.insert(pos, entering);
        out.push(sorted[half]);
    }
    Ok(out)
}

/// Centered sliding mean with edge replication.
pub fn mean_filter(row: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window)?;
    if window == 1 || row.is_empty() {
        return Ok(row.to_vec());
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(row.len() + 2 * half + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in padded(row, half) {
        acc += v;
        prefix.push(acc);
    }
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((0..row.len())
        .map(|t| ((prefix[t + window] - prefix[t]) / window as f64).clamp(lo, hi))
        .collect())
}

/// Mean window paired with a median window: the smallest odd length
/// `>= 1.5 × median`, and 1 for the unfiltered baseline.
pub fn tied_mean_len(median_len: usize) -> usize {
    if median_len <= 1 {
        return 1;
    }
    let target = (3 * median_len).div_ceil(2);
    if target.is_multiple_of(2) {
        target + 1
    } else {
        target
    }
}

/// Per-class median and mean window lengths in frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowConfig {
    pub median_len: Vec<usize>,
    pub mean_len: Vec<usize>,
}

impl WindowConfig {
    pub fn new(median_len: Vec<usize>, mean_len: Vec<usize>) -> Result<Self> {
        if median_len.len() != mean_len.len() {
            return Err(Error::invalid("window config", "median and mean lists differ in length"));
        }
        for (&m, &a) in median_len.iter().zip(&mean_len) {
            check_window(m)?;
            check_window(a)?;
            if a < m {
                return Err(Error::invalid(
                    "window config",
                    format!("mean window {a} shorter than median window {m}"),
                ));
            }
        }
        Ok(WindowConfig {
            median_len,
            mean_len,
        })
    }

    /// No smoothing for any class.
    pub fn identity(num_classes: usize) -> Self {
        WindowConfig {
            median_len: vec![1; num_classes],
            mean_len: vec![1; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.median_len.len()
    }
}

/// Median then mean filter on one row.
pub fn smooth_row(row: &[f64], median_len: usize, mean_len: usize) -> Result<Vec<f64>> {
    mean_filter(&median_filter(row, median_len)?, mean_len)
}

/// Applies each class's median and mean filters, in that order.
pub fn apply_pipeline(grid: &FrameGrid, cfg: &WindowConfig) -> Result<FrameGrid> {
    if cfg.num_classes() != grid.num_classes() {
        return Err(Error::Shape {
            clip: grid.clip_id.clone(),
            message: format!(
                "{} classes in grid, {} in window config",
                grid.num_classes(),
                cfg.num_classes()
            ),
        });
    }
    let probs = grid
        .probs
        .iter()
        .enumerate()
        .map(|(c, row)| smooth_row(row, cfg.median_len[c], cfg.mean_len[c]))
        .collect::<Result<_>>()?;
    FrameGrid::new(grid.clip_id.clone(), grid.hop_s, probs)
}

/// [`apply_pipeline`] over every clip of a bundle.
pub fn apply_to_bundle(bundle: &ScoreBundle, cfg: &WindowConfig) -> Result<ScoreBundle> {
    let grids = bundle
        .grids
        .par_iter()
        .map(|(k, g)| Ok((k.clone(), apply_pipeline(g, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    ScoreBundle::new(bundle.model_id.clone(), bundle.hop_s, grids.into_iter().collect())
}

/// Search bounds for [`tune_windows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSearch {
    /// Largest candidate window; only odd lengths are tried.
    pub search_max: usize,
    /// Search mean windows separately after the median instead of tying them.
    pub tune_mean: bool,
}

impl Default for WindowSearch {
    fn default() -> Self {
        WindowSearch {
            search_max: 500,
            tune_mean: false,
        }
    }
}

/// Per-class window search maximizing `PSDS_c / PSDS`.
///
/// Classes are visited once in index order. For each class every odd median
/// length up to `search_max` is scored with the other classes' windows held
/// at their current values; the unfiltered baseline is always a candidate
/// and ties go to the shortest window.
pub fn tune_windows(eval: &PsdsEvaluator<'_>, scores: &ScoreBundle, search: &WindowSearch) -> Result<WindowConfig> {
    if search.search_max == 0 {
        return Err(Error::invalid("window search", "search_max must be >= 1"));
    }
    let grids = eval.align(scores)?;
    let num_classes = eval.dataset().num_classes();
    let mut cfg = WindowConfig::identity(num_classes);
    let mut points = eval.all_class_points(scores)?;

    for c in 0..num_classes {
        let medians: Vec<(usize, usize)> = (1..=search.search_max)
            .step_by(2)
            .map(|m| (m, tied_mean_len(m)))
            .collect();
        let (best, best_points) = best_candidate(eval, &grids, scores.hop_s, c, &points, &medians)?;
        cfg.median_len[c] = best.0;
        cfg.mean_len[c] = best.1;
        points[c] = best_points;

        if search.tune_mean {
            let median = cfg.median_len[c];
            let means: Vec<(usize, usize)> = (median..=search.search_max.max(median))
                .step_by(2)
                .map(|a| (median, a))
                .collect();
            let (best, best_points) = best_candidate(eval, &grids, scores.hop_s, c, &points, &means)?;
            cfg.mean_len[c] = best.1;
            points[c] = best_points;
        }
    }
    Ok(cfg)
}

/// Objective `PSDS_c / PSDS` for the given per-class points; 0 when PSDS is 0.
pub fn window_objective(eval: &PsdsEvaluator<'_>, points: &[Vec<(f64, f64)>], class_id: usize) -> f64 {
    let roc = eval.roc_from_class_points(points);
    let overall = psds_overall(&roc, eval.params());
    if overall <= 0.0 {
        return 0.0;
    }
    psds_class(&roc, class_id, eval.params()) / overall
}

type Scored = ((usize, usize), Vec<(f64, f64)>);

fn best_candidate(
    eval: &PsdsEvaluator<'_>,
    grids: &[&FrameGrid],
    hop_s: f64,
    class_id: usize,
    points: &[Vec<(f64, f64)>],
    candidates: &[(usize, usize)],
) -> Result<Scored> {
    let scored: Vec<(f64, Scored)> = candidates
        .par_iter()
        .map(|&(median, mean)| {
            let rows = grids
                .iter()
                .map(|g| smooth_row(g.row(class_id), median, mean))
                .collect::<Result<Vec<_>>>()?;
            let row_refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let class_pts = eval.class_points(class_id, &row_refs, hop_s);
            let mut trial = points.to_vec();
            trial[class_id] = class_pts;
            let objective = window_objective(eval, &trial, class_id);
            Ok((objective, ((median, mean), trial.swap_remove(class_id))))
        })
        .collect::<Result<_>>()?;

    // strict improvement only: the first (shortest) window wins ties
    let mut best: Option<(f64, Scored)> = None;
    for (objective, cand) in scored {
        if best.as_ref().is_none_or(|(b, _)| objective > *b) {
            best = Some((objective, cand));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::Invariant("window search without candidates".into()))
}

/// Parses a window CSV `class,median_len,mean_len`, ordered by `class_names`.
pub fn parse_window_csv(text: &str, source_name: &str, class_names: &[String]) -> Result<WindowConfig> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                source_name: source_name.to_string(),
                column: name.to_string(),
            })
    };
    let (ci, mi, ai) = (col("class")?, col("median_len")?, col("mean_len")?);
    let mut median = vec![0usize; class_names.len()];
    let mut mean = vec![0usize; class_names.len()];
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let c = class_names
            .iter()
            .position(|n| n == &rec[ci])
            .ok_or_else(|| Error::parse(source_name, line, format!("unknown class `{}`", &rec[ci])))?;
        let num = |idx: usize| {
            rec[idx]
                .parse::<usize>()
                .map_err(|_| Error::parse(source_name, line, format!("`{}` is not a frame count", &rec[idx])))
        };
        median[c] = num(mi)?;
        mean[c] = num(ai)?;
    }
    if let Some(c) = median.iter().position(|&m| m == 0) {
        return Err(Error::invalid(
            "window config",
            format!("{source_name}: no windows for class `{}`", class_names[c]),
        ));
    }
    WindowConfig::new(median, mean)
}

/// Formats a window config as `class,median_len,mean_len` CSV.
pub fn format_window_csv(cfg: &WindowConfig, class_names: &[String]) -> String {
    let mut out = String::from("class,median_len,mean_len\n");
    for (c, name) in class_names.iter().enumerate() {
        out.push_str(&format!("{name},{},{}\n", cfg.median_len[c], cfg.mean_len[c]));
    }
    out
}
