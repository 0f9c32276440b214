//! Bipartite matching between ground-truth events and event predictions, and
//! the losses evaluated on the matched pairs.
//!
//! All losses are plain functions of given predictions; nothing here trains a
//! network. Probabilities are clamped to `[EPS, 1 - EPS]` before any log.

use crate::events::{interval_to_box, EventSet, NormalizedBox};
use crate::{ClipLabel, Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// One event-wise prediction: a box plus `C + 1` class probabilities, the
/// last entry being "no event".
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bbox: NormalizedBox,
    pub class_probs: Vec<f64>,
}

impl Prediction {
    pub fn new(bbox: NormalizedBox, class_probs: Vec<f64>) -> Result<Self> {
        if class_probs.len() < 2 {
            return Err(Error::invalid(
                "prediction",
                "needs at least one class plus the no-event entry",
            ));
        }
        if class_probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid("prediction", "negative or non-finite probability"));
        }
        let sum: f64 = class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "prediction",
                format!("class probabilities sum to {sum}, expected 1"),
            ));
        }
        Ok(Prediction { bbox, class_probs })
    }

    pub fn num_classes(&self) -> usize {
        self.class_probs.len() - 1
    }

    pub fn no_event_prob(&self) -> f64 {
        self.class_probs[self.class_probs.len() - 1]
    }
}

/// Ground-truth event in normalized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub class_id: usize,
    pub bbox: NormalizedBox,
}

/// Normalizes every event of a clip into a [`Target`].
pub fn targets_from_events(events: &EventSet) -> Result<Vec<Target>> {
    events
        .events
        .iter()
        .map(|e| {
            Ok(Target {
                class_id: e.class_id,
                bbox: interval_to_box(e.onset_s, e.offset_s, events.clip_duration_s)?,
            })
        })
        .collect()
}

/// Weights of the matching cost and localization loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    pub cost_class_weight: f64,
    /// Weight of the optional cross-entropy pushing unmatched predictions to "no event".
    pub no_object_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_iou: 2.0,
            lambda_l1: 5.0,
            cost_class_weight: 1.0,
            no_object_weight: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_iou,
            self.lambda_l1,
            self.cost_class_weight,
            self.no_object_weight,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("loss weights", "weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Result of a minimum-cost assignment: `assignment[i]` is the prediction
/// matched to ground truth `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignment: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Predictions that received no ground truth, in increasing order.
    pub fn unmatched(&self, num_predictions: usize) -> Vec<usize> {
        let mut used = vec![false; num_predictions];
        for &j in &self.assignment {
            used[j] = true;
        }
        (0..num_predictions).filter(|&j| !used[j]).collect()
    }
}

/// Minimum-cost injective assignment of the `n` rows of `cost` to its `m`
/// columns (`n <= m`).
///
/// Shortest augmenting paths with row and column potentials, `O(n²·m)`.
/// `total_cost` is the sum of the selected entries in row order.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    if n == 0 {
        return Ok(MatchResult {
            assignment: Vec::new(),
            total_cost: 0.0,
        });
    }
    let m = cost[0].len();
    if cost.iter().any(|row| row.len() != m) {
        return Err(Error::invalid("cost matrix", "rows have different lengths"));
    }
    if n > m {
        return Err(Error::invalid(
            "cost matrix",
            format!("{n} ground-truth events but only {m} predictions"),
        ));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost matrix", "costs must be finite"));
    }

    // 1-based indices; column 0 is a virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let row0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=m {
                if used[col] {
                    continue;
                }
                let slack = cost[row0 - 1][col - 1] - u[row0] - v[col];
                if slack < min_slack[col] {
                    min_slack[col] = slack;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            if col1 == 0 {
                return Err(Error::Invariant(
                    "hungarian: no augmenting column found".into(),
                ));
            }
            for col in 0..=m {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for col in 1..=m {
        if owner[col] != 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    if assignment.contains(&usize::MAX) {
        return Err(Error::Invariant("hungarian: unassigned row".into()));
    }
    let total_cost = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok(MatchResult {
        assignment,
        total_cost,
    })
}

/// `cost[i][j] = -w_cls·p̂_j(c_i) + λ_L1·‖b_i − b̂_j‖₁ + λ_IOU·(1 − IoU(b_i, b̂_j))`.
pub fn matching_cost(gt: &[Target], preds: &[Prediction], w: &LossWeights) -> Result<Vec<Vec<f64>>> {
    gt.iter()
        .map(|t| {
            preds
                .iter()
                .map(|p| {
                    let prob = class_prob(p, t.class_id)?;
                    Ok(-w.cost_class_weight * prob
                        + w.lambda_l1 * t.bbox.l1_distance(&p.bbox)
                        + w.lambda_iou * (1.0 - t.bbox.iou(&p.bbox)))
                })
                .collect()
        })
        .collect()
}

fn class_prob(p: &Prediction, class_id: usize) -> Result<f64> {
    if class_id >= p.num_classes() {
        return Err(Error::invalid(
            "class id",
            format!("{class_id} out of range for {} classes", p.num_classes()),
        ));
    }
    Ok(p.class_probs[class_id])
}

fn check_match(gt: &[Target], preds: &[Prediction], m: &MatchResult) -> Result<()> {
    if m.assignment.len() != gt.len() || m.assignment.iter().any(|&j| j >= preds.len()) {
        return Err(Error::invalid(
            "match",
            "assignment does not cover the ground truth",
        ));
    }
    Ok(())
}

/// Sum over matched pairs of `λ_IOU·(1 − IoU) + λ_L1·‖Δb‖₁`; not averaged.
pub fn localization_loss(gt: &[Target], preds: &[Prediction], m: &MatchResult, w: &LossWeights) -> Result<f64> {
    check_match(gt, preds, m)?;
    Ok(gt
        .iter()
        .zip(&m.assignment)
        .map(|(t, &j)| {
            let b = &preds[j].bbox;
            w.lambda_iou * (1.0 - t.bbox.iou(b)) + w.lambda_l1 * t.bbox.l1_distance(b)
        })
        .sum())
}

/// Mean negative log-probability of the ground-truth class at the matched
/// prediction. Zero for a clip without ground truth.
pub fn classification_loss(gt: &[Target], preds: &[Prediction], m: &MatchResult) -> Result<f64> {
    check_match(gt, preds, m)?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, &j) in gt.iter().zip(&m.assignment) {
        total += -clamp_prob(class_prob(&preds[j], t.class_id)?).ln();
    }
    Ok(total / gt.len() as f64)
}

/// `weight ×` mean cross-entropy of unmatched predictions against "no event".
pub fn no_object_loss(preds: &[Prediction], m: &MatchResult, weight: f64) -> f64 {
    let unmatched = m.unmatched(preds.len());
    if unmatched.is_empty() {
        return 0.0;
    }
    let ce: f64 = unmatched
        .iter()
        .map(|&j| -clamp_prob(preds[j].no_event_prob()).ln())
        .sum();
    weight * ce / unmatched.len() as f64
}

/// Clamped binary cross-entropy `-[y·ln p + (1 - y)·ln(1 - p)]`.
pub fn binary_cross_entropy(target: f64, p: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Mean binary cross-entropy between clip tags and predicted tag probabilities.
pub fn tagging_loss(labels: &ClipLabel, predicted: &[f64]) -> Result<f64> {
    if labels.tags.len() != predicted.len() {
        return Err(Error::invalid(
            "tags",
            format!("{} labels vs {} predictions", labels.tags.len(), predicted.len()),
        ));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .tags
        .iter()
        .zip(predicted)
        .map(|(&l, &y)| binary_cross_entropy(l, y))
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Binary focal loss `-α_t·(1 - p_t)^γ·ln p_t`.
pub fn focal_loss(p: f64, target: bool, gamma: f64, alpha: f64) -> f64 {
    let p = clamp_prob(p);
    let (pt, at) = if target { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// d/dp of [`focal_loss`] inside the clamp range.
pub fn focal_loss_grad(p: f64, target: bool, gamma: f64, alpha: f64) -> f64 {
    let p = clamp_prob(p);
    // with q = p_t, dL/dq = α_t·[γ(1-q)^(γ-1)·ln q − (1-q)^γ / q]; dq/dp = ±1
    let (q, at, sign) = if target {
        (p, alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - alpha, -1.0)
    };
    let decay = if gamma == 0.0 {
        0.0
    } else {
        gamma * (1.0 - q).powf(gamma - 1.0) * q.ln()
    };
    sign * at * (decay - (1.0 - q).powf(gamma) / q)
}

/// Focal loss against a soft target `y ∈ [0, 1]`: `y·FL(p, 1) + (1 − y)·FL(p, 0)`.
///
/// Reduces to [`focal_loss`] for hard targets.
pub fn soft_focal_loss(p: f64, y: f64, gamma: f64, alpha: f64) -> f64 {
    y * focal_loss(p, true, gamma, alpha) + (1.0 - y) * focal_loss(p, false, gamma, alpha)
}

/// d/dp of [`soft_focal_loss`].
pub fn soft_focal_loss_grad(p: f64, y: f64, gamma: f64, alpha: f64) -> f64 {
    y * focal_loss_grad(p, true, gamma, alpha) + (1.0 - y) * focal_loss_grad(p, false, gamma, alpha)
}
