//! Desk-scale simulation of burn-in plus teacher-guided semi-supervised
//! training.
//!
//! The model is a per-frame linear layer with a sigmoid, small enough to
//! differentiate by hand, trained on synthetic "spectrograms" in which every
//! class lights up its own frequency band while active. The teacher-guided
//! loop follows the usual recipe: supervised loss on weakly augmented
//! labeled clips, hard pseudo labels from an EMA teacher on weakly augmented
//! unlabeled clips, mixup of labeled and pseudo-labeled clips, a focal loss on
//! strongly augmented mixed clips, one SGD step on the summed gradients, then
//! the EMA teacher update.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::assignment::{binary_cross_entropy, soft_focal_loss, soft_focal_loss_grad, EPS};
use crate::events::{rasterize, Event, EventSet};
use crate::{Error, Result};

/// Frame-major features `[T][F]`.
pub type Features = Vec<Vec<f64>>;
/// Frame-major targets or probabilities `[T][C]`.
pub type FrameMatrix = Vec<Vec<f64>>;

/// One synthetic clip. Labeled clips carry frame labels and tags, weak clips
/// only tags, unlabeled clips neither.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub features: Features,
    pub frame_labels: Option<FrameMatrix>,
    pub clip_tags: Option<Vec<f64>>,
}

/// Shape and difficulty of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_labeled: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub frames: usize,
    pub bins: usize,
    pub classes: usize,
    pub noise_std: f64,
    pub amplitude: f64,
    /// Probability that a clip contains a class-free broadband burst.
    pub distractor_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_labeled: 8,
            n_weak: 16,
            n_unlabeled: 192,
            n_test: 64,
            frames: 64,
            bins: 24,
            classes: 3,
            noise_std: 0.6,
            amplitude: 1.0,
            distractor_prob: 0.5,
        }
    }
}

/// Labeled, weak, unlabeled and held-out test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub labeled: Vec<SynthClip>,
    pub weak: Vec<SynthClip>,
    pub unlabeled: Vec<SynthClip>,
    pub test: Vec<SynthClip>,
    pub classes: usize,
}

fn clip_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index as u64);
    rng
}

fn band(class_id: usize, classes: usize, bins: usize) -> std::ops::Range<usize> {
    class_id * bins / classes..(class_id + 1) * bins / classes
}

fn synth_clip(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<(Features, FrameMatrix)> {
    let t_len = spec.frames as f64;
    let mut events = Vec::new();
    for c in 0..spec.classes {
        let count = rng.random_range(0..=2);
        for _ in 0..count {
            let len = rng.random_range(4.0..t_len / 3.0);
            let onset = rng.random_range(0.0..t_len - len);
            events.push(Event::annotated(c, onset, onset + len)?);
        }
    }
    // frames are 1 s apart so frame t has its center at t + 0.5
    let set = EventSet::new("synth", t_len, events)?;
    let grid = rasterize(&set, 1.0, spec.classes)?;
    let labels: FrameMatrix = (0..spec.frames)
        .map(|t| (0..spec.classes).map(|c| grid.probs[c][t]).collect())
        .collect();

    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::invalid("noise std", e.to_string()))?;
    let mut x: Features = (0..spec.frames)
        .map(|_| (0..spec.bins).map(|_| noise.sample(rng)).collect())
        .collect();
    for (t, row) in labels.iter().enumerate() {
        for (c, &on) in row.iter().enumerate() {
            if on > 0.0 {
                for f in band(c, spec.classes, spec.bins) {
                    x[t][f] += spec.amplitude;
                }
            }
        }
    }
    if rng.random_bool(spec.distractor_prob.clamp(0.0, 1.0)) {
        let len = rng.random_range(2..=spec.frames / 4);
        let start = rng.random_range(0..=spec.frames - len);
        let gain = rng.random_range(0.3..0.8) * spec.amplitude;
        for row in &mut x[start..start + len] {
            for v in row.iter_mut() {
                *v += gain;
            }
        }
    }
    Ok((x, labels))
}

fn tags_of(labels: &FrameMatrix, classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| if labels.iter().any(|r| r[c] > 0.0) { 1.0 } else { 0.0 })
        .collect()
}

/// Generates all splits. Every clip has its own RNG stream derived from
/// `(seed, split, index)`, so the data is a pure function of the arguments.
pub fn generate_dataset(seed: u64, spec: &SynthSpec) -> Result<SynthData> {
    if spec.classes == 0 || spec.classes > spec.bins {
        return Err(Error::invalid("synthetic spec", "need 1 <= classes <= bins"));
    }
    if spec.frames < 16 {
        return Err(Error::invalid("synthetic spec", "need at least 16 frames"));
    }
    let split = |id: u64, n: usize, keep_labels: bool, keep_tags: bool| -> Result<Vec<SynthClip>> {
        (0..n)
            .map(|i| {
                let (features, labels) = synth_clip(spec, &mut clip_rng(seed, id, i))?;
                let tags = tags_of(&labels, spec.classes);
                Ok(SynthClip {
                    features,
                    frame_labels: keep_labels.then_some(labels),
                    clip_tags: keep_tags.then_some(tags),
                })
            })
            .collect()
    };
    Ok(SynthData {
        labeled: split(0, spec.n_labeled, true, true)?,
        weak: split(1, spec.n_weak, false, true)?,
        unlabeled: split(2, spec.n_unlabeled, false, false)?,
        test: split(3, spec.n_test, true, true)?,
        classes: spec.classes,
    })
}

/// Per-frame logistic classifier: `sigmoid(x·Wᵀ + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    /// `[C][F]`
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(classes: usize, bins: usize) -> Self {
        ToyModel {
            weight: vec![vec![0.0; bins]; classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn bins(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    /// Parameters flattened as all weights (class-major) followed by biases.
    pub fn params(&self) -> Vec<f64> {
        self.weight.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let bins = self.bins();
        for (c, row) in self.weight.iter_mut().enumerate() {
            row.copy_from_slice(&flat[c * bins..(c + 1) * bins]);
        }
        let n = self.weight.len() * bins;
        let classes = self.bias.len();
        self.bias.copy_from_slice(&flat[n..n + classes]);
    }

    fn axpy(&mut self, scale: f64, g: &ToyModel) {
        for (row, grow) in self.weight.iter_mut().zip(&g.weight) {
            for (w, d) in row.iter_mut().zip(grow) {
                *w += scale * d;
            }
        }
        for (b, d) in self.bias.iter_mut().zip(&g.bias) {
            *b += scale * d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logits(model: &ToyModel, x: &Features) -> FrameMatrix {
    x.iter()
        .map(|frame| {
            model
                .weight
                .iter()
                .zip(&model.bias)
                .map(|(w, b)| b + w.iter().zip(frame).map(|(a, v)| a * v).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Frame probabilities `[T][C]`.
pub fn forward(model: &ToyModel, x: &Features) -> FrameMatrix {
    logits(model, x)
        .into_iter()
        .map(|row| row.into_iter().map(sigmoid).collect())
        .collect()
}

/// Elementwise frame loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameLoss {
    Bce,
    Focal { gamma: f64, alpha: f64 },
}

impl FrameLoss {
    fn value(self, p: f64, y: f64) -> f64 {
        match self {
            FrameLoss::Bce => binary_cross_entropy(y, p),
            FrameLoss::Focal { gamma, alpha } => soft_focal_loss(p, y, gamma, alpha),
        }
    }

    /// d/dp of [`FrameLoss::value`].
    fn grad_p(self, p: f64, y: f64) -> f64 {
        match self {
            FrameLoss::Bce => {
                let p = p.clamp(EPS, 1.0 - EPS);
                -y / p + (1.0 - y) / (1.0 - p)
            }
            FrameLoss::Focal { gamma, alpha } => soft_focal_loss_grad(p, y, gamma, alpha),
        }
    }
}

/// Accumulates `scale · Σ_t g[t][c]·x[t]` into `grad`.
fn backprop(grad: &mut ToyModel, x: &Features, dz: &FrameMatrix, scale: f64) {
    for (frame, dzt) in x.iter().zip(dz) {
        for (c, &d) in dzt.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let s = scale * d;
            for (w, v) in grad.weight[c].iter_mut().zip(frame) {
                *w += s * v;
            }
            grad.bias[c] += s;
        }
    }
}

/// Mean frame loss of one clip and its parameter gradient (accumulated into
/// `grad` with weight `scale`).
pub fn frame_loss_grad(
    model: &ToyModel,
    x: &Features,
    targets: &FrameMatrix,
    loss: FrameLoss,
    grad: Option<(&mut ToyModel, f64)>,
) -> f64 {
    let probs = forward(model, x);
    let n = (x.len() * model.classes()).max(1) as f64;
    let mut total = 0.0;
    let mut dz = vec![vec![0.0; model.classes()]; x.len()];
    for (t, (prow, yrow)) in probs.iter().zip(targets).enumerate() {
        for (c, (&p, &y)) in prow.iter().zip(yrow).enumerate() {
            total += loss.value(p, y);
            dz[t][c] = loss.grad_p(p, y) * p * (1.0 - p) / n;
        }
    }
    if let Some((g, scale)) = grad {
        backprop(g, x, &dz, scale);
    }
    total / n
}

/// Clip-tag loss on frame-max pooled probabilities, with gradient.
pub fn tag_loss_grad(model: &ToyModel, x: &Features, tags: &[f64], grad: Option<(&mut ToyModel, f64)>) -> f64 {
    let probs = forward(model, x);
    let classes = model.classes();
    let mut total = 0.0;
    let mut dz = vec![vec![0.0; classes]; x.len()];
    for c in 0..classes {
        let (t_max, q) = probs
            .iter()
            .enumerate()
            .map(|(t, r)| (t, r[c]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        total += binary_cross_entropy(tags[c], q);
        let qc = q.clamp(EPS, 1.0 - EPS);
        let dq = -tags[c] / qc + (1.0 - tags[c]) / (1.0 - qc);
        dz[t_max][c] = dq * q * (1.0 - q) / classes as f64;
    }
    if let Some((g, scale)) = grad {
        backprop(g, x, &dz, scale);
    }
    total / classes as f64
}

/// Hard pseudo labels: 1 where the teacher's probability reaches `threshold`.
pub fn pseudo_label(teacher: &ToyModel, x_weak: &Features, threshold: f64) -> FrameMatrix {
    forward(teacher, x_weak)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|p| if p >= threshold { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// `teacher ← γ·teacher + (1 − γ)·student`, elementwise.
pub fn ema_update(teacher: &ToyModel, student: &ToyModel, gamma: f64) -> ToyModel {
    let mut out = teacher.clone();
    for (row, srow) in out.weight.iter_mut().zip(&student.weight) {
        for (t, s) in row.iter_mut().zip(srow) {
            *t = gamma * *t + (1.0 - gamma) * s;
        }
    }
    for (t, s) in out.bias.iter_mut().zip(&student.bias) {
        *t = gamma * *t + (1.0 - gamma) * s;
    }
    out
}

/// Augmentation strengths. Weak: frequency mask and shift; strong adds a
/// time mask and Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub freq_mask_width: usize,
    pub freq_shift_max: usize,
    pub time_mask_width: usize,
    pub gauss_noise_std: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            freq_mask_width: 2,
            freq_shift_max: 1,
            time_mask_width: 8,
            gauss_noise_std: 0.3,
        }
    }
}

/// Zeroes bins `start..start + width` in every frame.
pub fn freq_mask(x: &mut Features, start: usize, width: usize) {
    for frame in x.iter_mut() {
        let end = (start + width).min(frame.len());
        frame[start.min(end)..end].fill(0.0);
    }
}

/// Circularly shifts every frame by `k` bins (positive moves energy up).
pub fn freq_shift(x: &mut Features, k: isize) {
    for frame in x.iter_mut() {
        let n = frame.len() as isize;
        if n == 0 {
            continue;
        }
        frame.rotate_right(k.rem_euclid(n) as usize);
    }
}

/// Zeroes frames `start..start + width`.
pub fn time_mask(x: &mut Features, start: usize, width: usize) {
    let end = (start + width).min(x.len());
    for frame in &mut x[start.min(end)..end] {
        frame.fill(0.0);
    }
}

/// Frequency mask of random width `≤ freq_mask_width`, then a circular shift
/// drawn uniformly from `[-freq_shift_max, freq_shift_max]`.
pub fn augment_weak(x: &Features, spec: &AugmentSpec, rng: &mut impl Rng) -> Features {
    let mut out = x.clone();
    let bins = x.first().map_or(0, Vec::len);
    let width = rng.random_range(0..=spec.freq_mask_width.min(bins));
    if width > 0 {
        let start = rng.random_range(0..=bins - width);
        freq_mask(&mut out, start, width);
    }
    let s = spec.freq_shift_max as i64;
    if s > 0 {
        freq_shift(&mut out, rng.random_range(-s..=s) as isize);
    }
    out
}

/// Weak augmentation, then a random time mask and additive Gaussian noise.
pub fn augment_strong(x: &Features, spec: &AugmentSpec, rng: &mut impl Rng) -> Features {
    let mut out = augment_weak(x, spec, rng);
    let frames = x.len();
    let width = rng.random_range(0..=spec.time_mask_width.min(frames));
    if width > 0 {
        let start = rng.random_range(0..=frames - width);
        time_mask(&mut out, start, width);
    }
    if spec.gauss_noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.gauss_noise_std).expect("positive std");
        for v in out.iter_mut().flatten() {
            *v += noise.sample(rng);
        }
    }
    out
}

/// Convex combination `λ·a + (1 − λ)·b` of features and soft targets.
pub fn mixup(
    a: (&Features, &FrameMatrix),
    b: (&Features, &FrameMatrix),
    lambda: f64,
) -> Result<(Features, FrameMatrix)> {
    let same_shape = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        p.len() == q.len() && p.iter().zip(q).all(|(r, s)| r.len() == s.len())
    };
    if !same_shape(a.0, b.0) || !same_shape(a.1, b.1) {
        return Err(Error::invalid("mixup", "inputs differ in shape"));
    }
    let mix = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        p.iter()
            .zip(q)
            .map(|(r, s)| r.iter().zip(s).map(|(u, v)| lambda * u + (1.0 - lambda) * v).collect())
            .collect()
    };
    Ok((mix(a.0, b.0), mix(a.1, b.1)))
}

/// Training hyper-parameters and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslConfig {
    pub lr_alpha: f64,
    pub ema_gamma: f64,
    pub burn_in_epochs: usize,
    pub epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub mixup_beta: f64,
    /// Fixes the mixup coefficient instead of sampling it.
    pub mixup_lambda: Option<f64>,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub pseudo_threshold: f64,
    pub seed: u64,
    pub use_mixup: bool,
    pub use_focal: bool,
    pub asymmetric_aug: bool,
    /// Without EMA the teacher stays frozen at the burn-in model.
    pub use_ema: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            lr_alpha: 2.0,
            ema_gamma: 0.99,
            burn_in_epochs: 50,
            epochs: 50,
            batch_labeled: 32,
            batch_unlabeled: 32,
            mixup_beta: 0.2,
            mixup_lambda: None,
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            pseudo_threshold: 0.5,
            seed: 0,
            use_mixup: true,
            use_focal: true,
            asymmetric_aug: true,
            use_ema: true,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("ssl config", m.to_string()));
        if !(self.lr_alpha > 0.0 && self.lr_alpha.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.ema_gamma) {
            return bad("ema_gamma must lie in [0, 1)");
        }
        if !(self.mixup_beta > 0.0 && self.mixup_beta.is_finite()) {
            return bad("mixup_beta must be positive");
        }
        if let Some(l) = self.mixup_lambda {
            if !(0.0..=1.0).contains(&l) {
                return bad("mixup_lambda must lie in [0, 1]");
            }
        }
        if self.focal_gamma < 0.0 || !self.focal_gamma.is_finite() || !(0.0..=1.0).contains(&self.focal_alpha) {
            return bad("focal_gamma must be >= 0 and focal_alpha in [0, 1]");
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold < 1.0) {
            return bad("pseudo_threshold must lie in (0, 1)");
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return bad("batch sizes must be positive");
        }
        Ok(())
    }

    /// Loss on the mixed batch of the teacher-guided stage. The supervised
    /// term of both stages is plain BCE.
    pub fn guided_loss(&self) -> FrameLoss {
        if self.use_focal {
            FrameLoss::Focal {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            }
        } else {
            FrameLoss::Bce
        }
    }
}

/// Micro-averaged frame F1 at threshold 0.5 over labeled clips.
pub fn frame_f1(model: &ToyModel, clips: &[SynthClip]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for clip in clips {
        let Some(labels) = &clip.frame_labels else {
            continue;
        };
        for (prow, yrow) in forward(model, &clip.features).iter().zip(labels) {
            for (&p, &y) in prow.iter().zip(yrow) {
                match (p >= 0.5, y > 0.5) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// One row of the training report.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub stage: &'static str,
    pub epoch: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub student_f1: f64,
    pub teacher_f1: f64,
}

fn batches(n: usize, size: usize, steps: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new(); steps];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (0..steps)
        .map(|s| (0..size.min(n)).map(|k| order[(s * size + k) % n]).collect())
        .collect()
}

fn steps_per_epoch(sizes: &[(usize, usize)]) -> usize {
    sizes
        .iter()
        .map(|&(n, b)| n.div_ceil(b))
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Supervised objective over fixed inputs: mean frame loss over labeled
/// clips plus mean tag loss over weak clips.
pub fn supervised_objective(
    model: &ToyModel,
    labeled: &[(&Features, &FrameMatrix)],
    weak: &[(&Features, &[f64])],
    loss: FrameLoss,
    mut grad: Option<&mut ToyModel>,
) -> f64 {
    let mut total = 0.0;
    if !labeled.is_empty() {
        let scale = 1.0 / labeled.len() as f64;
        for (x, y) in labeled {
            total += scale * frame_loss_grad(model, x, y, loss, grad.as_deref_mut().map(|g| (g, scale)));
        }
    }
    if !weak.is_empty() {
        let scale = 1.0 / weak.len() as f64;
        for (x, tags) in weak {
            total += scale * tag_loss_grad(model, x, tags, grad.as_deref_mut().map(|g| (g, scale)));
        }
    }
    total
}

fn labeled_pairs(clips: &[SynthClip]) -> Vec<(&Features, &FrameMatrix)> {
    clips
        .iter()
        .filter_map(|c| c.frame_labels.as_ref().map(|y| (&c.features, y)))
        .collect()
}

fn weak_pairs(clips: &[SynthClip]) -> Vec<(&Features, &[f64])> {
    clips
        .iter()
        .filter_map(|c| c.clip_tags.as_deref().map(|t| (&c.features, t)))
        .collect()
}

/// Burn-in: plain BCE on labeled frames plus tag loss on weak clips,
/// mini-batch gradient descent without augmentation.
pub fn burn_in(data: &SynthData, cfg: &SslConfig) -> Result<(ToyModel, Vec<EpochReport>)> {
    cfg.validate()?;
    let bins = data
        .labeled
        .iter()
        .chain(&data.weak)
        .chain(&data.unlabeled)
        .find_map(|c| c.features.first().map(Vec::len))
        .unwrap_or(0);
    let mut model = ToyModel::zeros(data.classes, bins);
    let mut rng = clip_rng(cfg.seed, 100, 0);
    let labeled = labeled_pairs(&data.labeled);
    let weak = weak_pairs(&data.weak);
    let steps = steps_per_epoch(&[
        (labeled.len(), cfg.batch_labeled),
        (weak.len(), cfg.batch_labeled),
    ]);
    let mut history = Vec::with_capacity(cfg.burn_in_epochs);
    for epoch in 0..cfg.burn_in_epochs {
        let lb = batches(labeled.len(), cfg.batch_labeled, steps, &mut rng);
        let wb = batches(weak.len(), cfg.batch_labeled, steps, &mut rng);
        for (li, wi) in lb.iter().zip(&wb) {
            let l: Vec<_> = li.iter().map(|&i| labeled[i]).collect();
            let w: Vec<_> = wi.iter().map(|&i| weak[i]).collect();
            let mut grad = ToyModel::zeros(model.classes(), model.bins());
            supervised_objective(&model, &l, &w, FrameLoss::Bce, Some(&mut grad));
            model.axpy(-cfg.lr_alpha, &grad);
        }
        if !model.is_finite() {
            return Err(Error::Invariant("burn-in diverged".into()));
        }
        let loss = supervised_objective(&model, &labeled, &weak, FrameLoss::Bce, None);
        let f1 = frame_f1(&model, &data.test);
        history.push(EpochReport {
            stage: "burn_in",
            epoch,
            sup_loss: loss,
            unsup_loss: 0.0,
            student_f1: f1,
            teacher_f1: f1,
        });
    }
    Ok((model, history))
}

/// Outcome of the teacher-guided stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedResult {
    pub student: ToyModel,
    pub teacher: ToyModel,
    pub history: Vec<EpochReport>,
}

/// Teacher-guided stage starting from `init` for both student and teacher.
pub fn teacher_guided(init: &ToyModel, data: &SynthData, cfg: &SslConfig, aug: &AugmentSpec) -> Result<GuidedResult> {
    cfg.validate()?;
    let mut student = init.clone();
    let mut teacher = init.clone();
    let mut rng = clip_rng(cfg.seed, 200, 0);
    let beta = Beta::new(cfg.mixup_beta, cfg.mixup_beta)
        .map_err(|e| Error::invalid("mixup beta", e.to_string()))?;
    let loss = cfg.guided_loss();
    let labeled = labeled_pairs(&data.labeled);
    let weak = weak_pairs(&data.weak);
    let unlabeled: Vec<&Features> = data.unlabeled.iter().map(|c| &c.features).collect();
    let steps = steps_per_epoch(&[
        (labeled.len(), cfg.batch_labeled),
        (weak.len(), cfg.batch_labeled),
        (unlabeled.len(), cfg.batch_unlabeled),
    ]);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lb = batches(labeled.len(), cfg.batch_labeled, steps, &mut rng);
        let wb = batches(weak.len(), cfg.batch_labeled, steps, &mut rng);
        let ub = batches(unlabeled.len(), cfg.batch_unlabeled, steps, &mut rng);
        let (mut sup_sum, mut unsup_sum) = (0.0, 0.0);
        for step in 0..steps {
            let mut grad = ToyModel::zeros(student.classes(), student.bins());

            // supervised term on weakly augmented labeled and weak clips
            let l_aug: Vec<Features> = lb[step]
                .iter()
                .map(|&i| augment_weak(labeled[i].0, aug, &mut rng))
                .collect();
            let w_aug: Vec<Features> = wb[step]
                .iter()
                .map(|&i| augment_weak(weak[i].0, aug, &mut rng))
                .collect();
            let l_in: Vec<_> = l_aug.iter().zip(&lb[step]).map(|(x, &i)| (x, labeled[i].1)).collect();
            let w_in: Vec<_> = w_aug.iter().zip(&wb[step]).map(|(x, &i)| (x, weak[i].1)).collect();
            sup_sum += supervised_objective(&student, &l_in, &w_in, FrameLoss::Bce, Some(&mut grad));

            // hard pseudo labels from the teacher on weak views
            let pseudo: Vec<FrameMatrix> = ub[step]
                .iter()
                .map(|&i| {
                    let xw = augment_weak(unlabeled[i], aug, &mut rng);
                    pseudo_label(&teacher, &xw, cfg.pseudo_threshold)
                })
                .collect();
            let unl: Vec<(&Features, &FrameMatrix)> = ub[step]
                .iter()
                .zip(&pseudo)
                .map(|(&i, y)| (unlabeled[i], y))
                .collect();
            let lab: Vec<(&Features, &FrameMatrix)> = lb[step].iter().map(|&i| labeled[i]).collect();

            let mixed = if cfg.use_mixup {
                mix_batches(&lab, &unl, cfg, &beta, &mut rng)?
            } else {
                lab.iter()
                    .chain(&unl)
                    .map(|(x, y)| ((*x).clone(), (*y).clone()))
                    .collect()
            };

            if !mixed.is_empty() {
                let scale = 1.0 / mixed.len() as f64;
                for (x, y) in &mixed {
                    let view = if cfg.asymmetric_aug {
                        augment_strong(x, aug, &mut rng)
                    } else {
                        augment_weak(x, aug, &mut rng)
                    };
                    unsup_sum += scale * frame_loss_grad(&student, &view, y, loss, Some((&mut grad, scale)));
                }
            }

            student.axpy(-cfg.lr_alpha, &grad);
            if cfg.use_ema {
                teacher = ema_update(&teacher, &student, cfg.ema_gamma);
            }
        }
        if !student.is_finite() {
            return Err(Error::Invariant("teacher-guided training diverged".into()));
        }
        history.push(EpochReport {
            stage: "teacher_guided",
            epoch,
            sup_loss: sup_sum / steps as f64,
            unsup_loss: unsup_sum / steps as f64,
            student_f1: frame_f1(&student, &data.test),
            teacher_f1: frame_f1(&teacher, &data.test),
        });
    }
    Ok(GuidedResult {
        student,
        teacher,
        history,
    })
}

/// Pairs labeled and pseudo-labeled clips, resampling the smaller side. With
/// no unlabeled clips the labeled batch is mixed with a shuffled copy of itself.
fn mix_batches<'a>(
    lab: &[(&'a Features, &'a FrameMatrix)],
    unl: &[(&'a Features, &'a FrameMatrix)],
    cfg: &SslConfig,
    beta: &Beta<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Features, FrameMatrix)>> {
    if lab.is_empty() && unl.is_empty() {
        return Ok(Vec::new());
    }
    let (a, b) = match (lab.is_empty(), unl.is_empty()) {
        (false, false) => (lab, unl),
        (false, true) => (lab, lab),
        (true, _) => (unl, unl),
    };
    let n = a.len().max(b.len());
    let pick = |side: &[(&'a Features, &'a FrameMatrix)], k: usize, rng: &mut ChaCha8Rng| {
        if side.len() == n {
            side[k]
        } else {
            side[rng.random_range(0..side.len())]
        }
    };
    let mut partner: Vec<usize> = (0..b.len()).collect();
    partner.shuffle(rng);
    (0..n)
        .map(|k| {
            let first = pick(a, k, rng);
            let second = if b.len() == n { b[partner[k]] } else { pick(b, k, rng) };
            let lambda = cfg.mixup_lambda.unwrap_or_else(|| beta.sample(rng));
            mixup(first, second, lambda)
        })
        .collect()
}

/// Summary of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub burn_in_f1: f64,
    pub student_f1: f64,
    pub teacher_f1: f64,
    pub history: Vec<EpochReport>,
}

impl SimulationReport {
    /// CSV with one row per epoch of both stages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,epoch,sup_loss,unsup_loss,student_f1,teacher_f1\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.6},{:.6}\n",
                r.stage, r.epoch, r.sup_loss, r.unsup_loss, r.student_f1, r.teacher_f1
            ));
        }
        out
    }
}

/// Generates data, runs burn-in, then the teacher-guided stage.
pub fn simulate(spec: &SynthSpec, cfg: &SslConfig, aug: &AugmentSpec) -> Result<SimulationReport> {
    let data = generate_dataset(cfg.seed, spec)?;
    let (init, mut history) = burn_in(&data, cfg)?;
    let guided = teacher_guided(&init, &data, cfg, aug)?;
    history.extend(guided.history);
    Ok(SimulationReport {
        burn_in_f1: frame_f1(&init, &data.test),
        student_f1: frame_f1(&guided.student, &data.test),
        teacher_f1: frame_f1(&guided.teacher, &data.test),
        history,
    })
}
