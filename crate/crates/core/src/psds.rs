//! Polyphonic Sound Detection Score.
//!
//! Detections are matched to ground truth with intersection criteria:
//!
//! * DTC: a detection passes if the fraction of its duration covered by
//!   same-class ground truth is at least `rho_dtc`;
//! * GTC: a ground-truth event is detected (one true positive) if the
//!   fraction of its duration covered by DTC-passing detections is at least
//!   `rho_gtc`;
//! * a detection is a true-positive detection if it passes DTC and overlaps a
//!   detected ground-truth event; every other detection is a false positive;
//! * CTTC: a false positive of class `c` is a cross-trigger on class `c'` if
//!   `c'` ground truth covers at least `rho_cttc` of it.
//!
//! Sweeping the binarization threshold gives one (eFPR, TP ratio) operating
//! point per class and threshold. The per-class ROC is the staircase upper
//! envelope of those points and every integral below is an exact sum of
//! rectangles over `[0, e_max]`.
//!
//! Two scores are derived from the ROCs:
//!
//! * [`psds_overall`] integrates `μ(e) − α_ST·σ(e)` (clipped at zero), with
//!   `μ`/`σ` the mean and population standard deviation of the per-class TP
//!   ratios across classes that have ground truth;
//! * [`psds_class`] is the class-specific score. Its class-dependent mean is
//!   the class's own TP ratio, so the deviation term vanishes and the score
//!   is the normalized area under that class's staircase.
//!
//! Every per-class quantity depends only on that class's detections, which
//! [`PsdsEvaluator::class_points`] exploits to re-score a single class.

use rayon::prelude::*;

use crate::dataio::{Dataset, ScoreBundle};
use crate::events::{binarize_row, de_overlap, Event, EventSet, FrameGrid};
use crate::{Error, Result};

/// Matching tolerances and penalties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdsParams {
    pub rho_dtc: f64,
    pub rho_gtc: f64,
    pub rho_cttc: f64,
    pub alpha_ct: f64,
    pub alpha_st: f64,
    /// eFPR ceiling in false positives per hour.
    pub e_max: f64,
}

impl PsdsParams {
    /// Onset-sensitive profile.
    pub fn psds1() -> Self {
        PsdsParams {
            rho_dtc: 0.7,
            rho_gtc: 0.7,
            rho_cttc: 0.3,
            alpha_ct: 0.0,
            alpha_st: 1.0,
            e_max: 100.0,
        }
    }

    /// Cross-trigger-penalizing profile with loose localization.
    pub fn psds2() -> Self {
        PsdsParams {
            rho_dtc: 0.1,
            rho_gtc: 0.1,
            rho_cttc: 0.3,
            alpha_ct: 0.5,
            alpha_st: 1.0,
            e_max: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = |v: f64| v > 0.0 && v <= 1.0;
        if !(ratio(self.rho_dtc) && ratio(self.rho_gtc) && ratio(self.rho_cttc)) {
            return Err(Error::invalid("psds params", "tolerance ratios must lie in (0, 1]"));
        }
        if !(self.alpha_ct >= 0.0 && self.alpha_st >= 0.0) || !self.alpha_ct.is_finite() || !self.alpha_st.is_finite() {
            return Err(Error::invalid("psds params", "alpha_ct and alpha_st must be >= 0"));
        }
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return Err(Error::invalid("psds params", "e_max must be positive"));
        }
        Ok(())
    }
}

/// `count` thresholds evenly spaced from 0.01 to 0.99 inclusive.
pub fn default_thresholds(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..count)
            .map(|i| (1.0 + 98.0 * i as f64 / (count - 1) as f64) / 100.0)
            .collect(),
    }
}

/// Matching outcome for one class of one clip.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCounts {
    /// Detected ground-truth events.
    pub tp: usize,
    /// False-positive detections.
    pub fp: usize,
    /// `cross_triggers[c']`: false positives cross-triggering class `c'`.
    pub cross_triggers: Vec<usize>,
}

impl ClassCounts {
    fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        if self.cross_triggers.len() < other.cross_triggers.len() {
            self.cross_triggers.resize(other.cross_triggers.len(), 0);
        }
        for (a, b) in self.cross_triggers.iter_mut().zip(&other.cross_triggers) {
            *a += b;
        }
    }
}

/// Matches the detections of one class against the ground truth of a clip.
pub fn match_class(
    gt: &EventSet,
    detections: &[Event],
    class_id: usize,
    num_classes: usize,
    params: &PsdsParams,
) -> ClassCounts {
    let gts: Vec<&Event> = gt.of_class(class_id).collect();
    let dtc_pass: Vec<bool> = detections
        .iter()
        .map(|d| {
            let covered: f64 = gts.iter().map(|g| d.intersection(g)).sum();
            covered / d.duration() >= params.rho_dtc
        })
        .collect();
    let gtc_pass: Vec<bool> = gts
        .iter()
        .map(|g| {
            let covered: f64 = detections
                .iter()
                .zip(&dtc_pass)
                .filter(|(_, &pass)| pass)
                .map(|(d, _)| d.intersection(g))
                .sum();
            covered / g.duration() >= params.rho_gtc
        })
        .collect();

    let mut counts = ClassCounts {
        tp: gtc_pass.iter().filter(|&&p| p).count(),
        fp: 0,
        cross_triggers: vec![0; num_classes],
    };
    for (d, &dtc) in detections.iter().zip(&dtc_pass) {
        let is_tp = dtc
            && gts
                .iter()
                .zip(&gtc_pass)
                .any(|(g, &ok)| ok && d.intersection(g) > 0.0);
        if is_tp {
            continue;
        }
        counts.fp += 1;
        for other in (0..num_classes).filter(|&c| c != class_id) {
            let covered: f64 = gt.of_class(other).map(|g| d.intersection(g)).sum();
            if covered / d.duration() >= params.rho_cttc {
                counts.cross_triggers[other] += 1;
            }
        }
    }
    counts
}

/// Per-class TP / FP / cross-trigger counts of one clip.
///
/// Same-class detections are matched as given; callers de-overlap first if
/// needed.
pub fn match_clip(gt: &EventSet, det: &EventSet, num_classes: usize, params: &PsdsParams) -> Vec<ClassCounts> {
    (0..num_classes)
        .map(|c| {
            let dets: Vec<Event> = det.of_class(c).copied().collect();
            match_class(gt, &dets, c, num_classes, params)
        })
        .collect()
}

/// Per-class TP ratio and eFPR at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tp_ratio: Vec<f64>,
    /// Effective false positives per hour.
    pub efpr: Vec<f64>,
    /// Ground-truth events per class; classes with none are left out of
    /// class averages.
    pub gt_counts: Vec<usize>,
}

/// Staircase upper envelope of one class's operating points.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    /// `(efpr, tp_ratio)` with both coordinates strictly increasing.
    pub steps: Vec<(f64, f64)>,
}

impl Staircase {
    /// Builds the envelope `r(e) = max{tp : efpr <= e}`.
    pub fn from_points(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let mut steps: Vec<(f64, f64)> = Vec::new();
        for (e, r) in pts {
            let best = steps.last().map_or(0.0, |s| s.1);
            if r > best {
                if steps.last().is_some_and(|s| s.0 == e) {
                    steps.last_mut().unwrap().1 = r;
                } else {
                    steps.push((e, r));
                }
            }
        }
        Staircase { steps }
    }

    /// Right-continuous step value at `e`; zero below the first step.
    pub fn value_at(&self, e: f64) -> f64 {
        match self.steps.partition_point(|s| s.0 <= e) {
            0 => 0.0,
            i => self.steps[i - 1].1,
        }
    }
}

/// Per-class ROC staircases.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub classes: Vec<Staircase>,
    pub has_ground_truth: Vec<bool>,
}

impl RocCurve {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Builds the per-class staircase envelopes of a set of operating points.
pub fn build_roc(points: &[OperatingPoint]) -> Result<RocCurve> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("operating points", "need at least one"))?;
    let num_classes = first.tp_ratio.len();
    if points
        .iter()
        .any(|p| p.tp_ratio.len() != num_classes || p.efpr.len() != num_classes)
    {
        return Err(Error::invalid("operating points", "inconsistent class counts"));
    }
    let classes = (0..num_classes)
        .map(|c| Staircase::from_points(points.iter().map(|p| (p.efpr[c], p.tp_ratio[c]))))
        .collect();
    Ok(RocCurve {
        classes,
        has_ground_truth: first.gt_counts.iter().map(|&n| n > 0).collect(),
    })
}

/// Breakpoints of the given staircases inside `[0, e_max)`, plus 0 and `e_max`.
fn breakpoints<'a>(curves: impl Iterator<Item = &'a Staircase>, e_max: f64) -> Vec<f64> {
    let mut xs = vec![0.0, e_max];
    for s in curves {
        xs.extend(s.steps.iter().map(|st| st.0).filter(|&e| e > 0.0 && e < e_max));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Normalized area under `r(e) = μ − α_ST·σ` across classes with ground truth.
pub fn psds_overall(roc: &RocCurve, params: &PsdsParams) -> f64 {
    let active: Vec<&Staircase> = roc
        .classes
        .iter()
        .zip(&roc.has_ground_truth)
        .filter(|(_, &has)| has)
        .map(|(s, _)| s)
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    let xs = breakpoints(active.iter().copied(), params.e_max);
    let n = active.len() as f64;
    let mut area = 0.0;
    for w in xs.windows(2) {
        let values: Vec<f64> = active.iter().map(|s| s.value_at(w[0])).collect();
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let r = (mu - params.alpha_st * var.sqrt()).max(0.0);
        area += r * (w[1] - w[0]);
    }
    (area / params.e_max).clamp(0.0, 1.0)
}

/// Class-specific PSDS of class `c`.
///
/// The class-dependent mean equals the class's own TP ratio and the deviation
/// from it is zero, so `α_ST` has no effect.
pub fn psds_class(roc: &RocCurve, class_id: usize, params: &PsdsParams) -> f64 {
    let Some(curve) = roc.classes.get(class_id) else {
        return 0.0;
    };
    if !roc.has_ground_truth[class_id] {
        return 0.0;
    }
    let xs = breakpoints(std::iter::once(curve), params.e_max);
    let mut area = 0.0;
    for w in xs.windows(2) {
        let r = curve.value_at(w[0]);
        let mu = r;
        let sigma = r - mu;
        area += (r - params.alpha_st * sigma).max(0.0) * (w[1] - w[0]);
    }
    (area / params.e_max).clamp(0.0, 1.0)
}

/// Scores of one evaluation: overall and per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdsReport {
    pub overall: f64,
    pub per_class: Vec<f64>,
    pub roc: RocCurve,
    pub points: Vec<OperatingPoint>,
}

/// Evaluates score grids against a dataset over a fixed threshold sweep.
///
/// Clips are processed in dataset (sorted clip id) order and thresholds in the
/// given order, so parallel evaluation reduces deterministically.
pub struct PsdsEvaluator<'a> {
    dataset: &'a Dataset,
    params: PsdsParams,
    thresholds: Vec<f64>,
    gt_counts: Vec<usize>,
    total_hours: f64,
}

impl<'a> PsdsEvaluator<'a> {
    pub fn new(dataset: &'a Dataset, params: PsdsParams, thresholds: Vec<f64>) -> Result<Self> {
        params.validate()?;
        if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::invalid(
                "thresholds",
                "need at least one threshold, all in (0, 1)",
            ));
        }
        Ok(PsdsEvaluator {
            dataset,
            params,
            gt_counts: dataset.gt_counts(),
            total_hours: dataset.total_duration_s() / 3600.0,
            thresholds,
        })
    }

    pub fn params(&self) -> &PsdsParams {
        &self.params
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    /// Grids of `bundle` in dataset clip order.
    pub fn align<'b>(&self, bundle: &'b ScoreBundle) -> Result<Vec<&'b FrameGrid>> {
        let n = self.dataset.num_classes();
        self.dataset
            .ground_truth
            .keys()
            .map(|clip| {
                let g = bundle.grid_for(clip).ok_or_else(|| Error::Shape {
                    clip: clip.clone(),
                    message: format!("model `{}` has no scores for this clip", bundle.model_id),
                })?;
                if g.num_classes() != n {
                    return Err(Error::Shape {
                        clip: clip.clone(),
                        message: format!("{} classes in scores, {n} in dataset", g.num_classes()),
                    });
                }
                Ok(g)
            })
            .collect()
    }

    /// `(efpr, tp_ratio)` of class `c` at every threshold, given that class's
    /// score row for every clip in dataset order.
    pub fn class_points(&self, class_id: usize, rows: &[&[f64]], hop_s: f64) -> Vec<(f64, f64)> {
        self.thresholds
            .par_iter()
            .map(|&th| {
                let mut total = ClassCounts::default();
                for (set, row) in self.dataset.ground_truth.values().zip(rows) {
                    let counts = self.count_row(set, row, class_id, th, hop_s);
                    total.add(&counts);
                }
                self.rates(class_id, &total)
            })
            .collect()
    }

    fn count_row(&self, gt: &EventSet, row: &[f64], class_id: usize, threshold: f64, hop_s: f64) -> ClassCounts {
        let mut dets = Vec::new();
        binarize_row(row, threshold, hop_s, gt.clip_duration_s, |on, off, peak| {
            dets.push(Event {
                class_id,
                onset_s: on,
                offset_s: off,
                score: peak,
            })
        });
        let dets = de_overlap(&EventSet {
            clip_id: gt.clip_id.clone(),
            clip_duration_s: gt.clip_duration_s,
            events: dets,
        });
        match_class(gt, &dets.events, class_id, self.dataset.num_classes(), &self.params)
    }

    fn rates(&self, class_id: usize, counts: &ClassCounts) -> (f64, f64) {
        let n = self.dataset.num_classes();
        let tp_ratio = counts.tp as f64 / self.gt_counts[class_id].max(1) as f64;
        let ct_term = if n > 1 {
            let ct: usize = counts.cross_triggers.iter().sum();
            self.params.alpha_ct * ct as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let efpr = (counts.fp as f64 + ct_term) / self.total_hours;
        (efpr, tp_ratio)
    }

    /// Operating point of `bundle` at one threshold applied to every class.
    pub fn operating_point(&self, bundle: &ScoreBundle, threshold: f64) -> Result<OperatingPoint> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid("threshold", format!("{threshold} not in (0, 1)")));
        }
        let grids = self.align(bundle)?;
        let n = self.dataset.num_classes();
        let mut tp_ratio = Vec::with_capacity(n);
        let mut efpr = Vec::with_capacity(n);
        for c in 0..n {
            let mut total = ClassCounts::default();
            for (set, g) in self.dataset.ground_truth.values().zip(&grids) {
                total.add(&self.count_row(set, g.row(c), c, threshold, bundle.hop_s));
            }
            let (e, r) = self.rates(c, &total);
            efpr.push(e);
            tp_ratio.push(r);
        }
        Ok(OperatingPoint {
            threshold,
            tp_ratio,
            efpr,
            gt_counts: self.gt_counts.clone(),
        })
    }

    /// Operating points of every threshold from per-class point lists.
    pub fn points_from_classes(&self, per_class: &[Vec<(f64, f64)>]) -> Vec<OperatingPoint> {
        self.thresholds
            .iter()
            .enumerate()
            .map(|(k, &threshold)| OperatingPoint {
                threshold,
                efpr: per_class.iter().map(|pts| pts[k].0).collect(),
                tp_ratio: per_class.iter().map(|pts| pts[k].1).collect(),
                gt_counts: self.gt_counts.clone(),
            })
            .collect()
    }

    /// Per-class point lists for all classes of `bundle`.
    pub fn all_class_points(&self, bundle: &ScoreBundle) -> Result<Vec<Vec<(f64, f64)>>> {
        let grids = self.align(bundle)?;
        Ok((0..self.dataset.num_classes())
            .map(|c| {
                let rows: Vec<&[f64]> = grids.iter().map(|g| g.row(c)).collect();
                self.class_points(c, &rows, bundle.hop_s)
            })
            .collect())
    }

    /// ROC built from per-class point lists.
    pub fn roc_from_class_points(&self, per_class: &[Vec<(f64, f64)>]) -> RocCurve {
        RocCurve {
            classes: per_class
                .iter()
                .map(|pts| Staircase::from_points(pts.iter().copied()))
                .collect(),
            has_ground_truth: self.gt_counts.iter().map(|&n| n > 0).collect(),
        }
    }

    /// Full evaluation of one model.
    pub fn evaluate(&self, bundle: &ScoreBundle) -> Result<PsdsReport> {
        let per_class = self.all_class_points(bundle)?;
        let points = self.points_from_classes(&per_class);
        let roc = build_roc(&points)?;
        Ok(PsdsReport {
            overall: psds_overall(&roc, &self.params),
            per_class: (0..roc.num_classes())
                .map(|c| psds_class(&roc, c, &self.params))
                .collect(),
            roc,
            points,
        })
    }
}

/// Machine-readable dump of raw operating points: `class,threshold,efpr,tp_ratio`.
pub fn format_roc_points(points: &[OperatingPoint], class_names: &[String]) -> String {
    let mut out = String::from("class,threshold,efpr,tp_ratio\n");
    for (c, name) in class_names.iter().enumerate() {
        for p in points {
            out.push_str(&format!("{name},{},{},{}\n", p.threshold, p.efpr[c], p.tp_ratio[c]));
        }
    }
    out
}
