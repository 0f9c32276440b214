//! Event-level and frame-level representations of sound events.
//!
//! Time is always in seconds. A frame `t` of a grid with hop `h` covers
//! `[t·h, (t+1)·h)` and is considered part of an event iff its center
//! `(t + 0.5)·h` lies in the event's half-open interval `[onset, offset)`.

use std::cmp::Ordering;

use crate::{Error, Result};

/// Slack allowed on normalized-box bounds before a box is rejected.
const BOX_TOLERANCE: f64 = 1e-9;

/// One annotated or detected sound event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub class_id: usize,
    pub onset_s: f64,
    pub offset_s: f64,
    pub score: f64,
}

impl Event {
    pub fn new(class_id: usize, onset_s: f64, offset_s: f64, score: f64) -> Result<Self> {
        if !(onset_s.is_finite() && offset_s.is_finite()) || onset_s < 0.0 || onset_s >= offset_s {
            return Err(Error::invalid(
                "event",
                format!("interval [{onset_s}, {offset_s}) must satisfy 0 <= onset < offset"),
            ));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid("event", format!("score {score} outside [0, 1]")));
        }
        Ok(Event {
            class_id,
            onset_s,
            offset_s,
            score,
        })
    }

    /// Ground-truth event with score 1.
    pub fn annotated(class_id: usize, onset_s: f64, offset_s: f64) -> Result<Self> {
        Self::new(class_id, onset_s, offset_s, 1.0)
    }

    pub fn duration(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.onset_s, self.offset_s)
    }

    /// Length of the time overlap with `other`, zero when disjoint.
    pub fn intersection(&self, other: &Event) -> f64 {
        intersection(self.interval(), other.interval())
    }
}

/// Event boundary as a fraction of the clip: center and length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBox {
    pub center: f64,
    pub length: f64,
}

impl NormalizedBox {
    /// Builds a box, clamping sub-tolerance excursions outside `[0, 1]`.
    pub fn new(center: f64, length: f64) -> Result<Self> {
        if !(center.is_finite() && length.is_finite()) || length <= 0.0 {
            return Err(Error::invalid(
                "normalized box",
                format!("center {center}, length {length}"),
            ));
        }
        let mut start = center - length / 2.0;
        let mut end = center + length / 2.0;
        if start < -BOX_TOLERANCE || end > 1.0 + BOX_TOLERANCE {
            return Err(Error::invalid(
                "normalized box",
                format!("[{start}, {end}] leaves the clip"),
            ));
        }
        start = start.max(0.0);
        end = end.min(1.0);
        if start == center - length / 2.0 && end == center + length / 2.0 {
            return Ok(NormalizedBox { center, length });
        }
        Ok(NormalizedBox {
            center: (start + end) / 2.0,
            length: end - start,
        })
    }

    pub fn start(&self) -> f64 {
        self.center - self.length / 2.0
    }

    pub fn end(&self) -> f64 {
        self.center + self.length / 2.0
    }

    /// L1 distance between the `(center, length)` parameterizations.
    pub fn l1_distance(&self, other: &NormalizedBox) -> f64 {
        (self.center - other.center).abs() + (self.length - other.length).abs()
    }

    pub fn iou(&self, other: &NormalizedBox) -> f64 {
        segment_iou((self.start(), self.end()), (other.start(), other.end()))
    }
}

/// Converts a normalized box into `(onset_s, offset_s)` for a clip of the given duration.
pub fn box_to_interval(b: NormalizedBox, clip_duration_s: f64) -> Result<(f64, f64)> {
    if !(clip_duration_s > 0.0 && clip_duration_s.is_finite()) {
        return Err(Error::invalid(
            "clip duration",
            format!("{clip_duration_s} must be positive"),
        ));
    }
    Ok((b.start() * clip_duration_s, b.end() * clip_duration_s))
}

/// Converts an interval inside a clip into its normalized box.
pub fn interval_to_box(onset_s: f64, offset_s: f64, clip_duration_s: f64) -> Result<NormalizedBox> {
    if !(clip_duration_s > 0.0 && clip_duration_s.is_finite()) {
        return Err(Error::invalid(
            "clip duration",
            format!("{clip_duration_s} must be positive"),
        ));
    }
    if !(0.0 <= onset_s && onset_s < offset_s && offset_s <= clip_duration_s) {
        return Err(Error::invalid(
            "interval",
            format!("[{onset_s}, {offset_s}) not inside a clip of {clip_duration_s} s"),
        ));
    }
    NormalizedBox::new(
        (onset_s + offset_s) / 2.0 / clip_duration_s,
        (offset_s - onset_s) / clip_duration_s,
    )
}

/// Length of the overlap of two intervals.
pub fn intersection(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// 1-D intersection over union of two intervals.
pub fn segment_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection(a, b);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Events of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    pub clip_id: String,
    pub clip_duration_s: f64,
    pub events: Vec<Event>,
}

impl EventSet {
    pub fn new(clip_id: impl Into<String>, clip_duration_s: f64, events: Vec<Event>) -> Result<Self> {
        let clip_id = clip_id.into();
        if !(clip_duration_s > 0.0 && clip_duration_s.is_finite()) {
            return Err(Error::invalid(
                "clip duration",
                format!("{clip_id}: {clip_duration_s} must be positive"),
            ));
        }
        if let Some(e) = events.iter().find(|e| e.offset_s > clip_duration_s) {
            return Err(Error::invalid(
                "event",
                format!(
                    "{clip_id}: offset {} exceeds clip duration {clip_duration_s}",
                    e.offset_s
                ),
            ));
        }
        Ok(EventSet {
            clip_id,
            clip_duration_s,
            events,
        })
    }

    pub fn empty(clip_id: impl Into<String>, clip_duration_s: f64) -> Result<Self> {
        Self::new(clip_id, clip_duration_s, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_class(&self, class_id: usize) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.class_id == class_id)
    }
}

/// Clip-level tags, hard (`{0, 1}`) or predicted (`[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLabel {
    pub tags: Vec<f64>,
}

impl ClipLabel {
    pub fn new(tags: Vec<f64>) -> Result<Self> {
        if tags.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("clip label", "tags must lie in [0, 1]"));
        }
        Ok(ClipLabel { tags })
    }

    /// Hard tags: 1 for every class with at least one event.
    pub fn from_events(events: &EventSet, num_classes: usize) -> Self {
        let mut tags = vec![0.0; num_classes];
        for e in &events.events {
            if e.class_id < num_classes {
                tags[e.class_id] = 1.0;
            }
        }
        ClipLabel { tags }
    }
}

/// Number of frames needed to cover a clip.
pub fn frame_count(clip_duration_s: f64, hop_s: f64) -> usize {
    let frames = clip_duration_s / hop_s;
    // absorb representation error such as 3.0 / 0.1 = 30.000000000000004
    let rounded = frames.round();
    if (frames - rounded).abs() < 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        frames.ceil() as usize
    }
}

/// Per-class frame probabilities of one clip, stored class-major (`probs[c][t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub clip_id: String,
    pub hop_s: f64,
    pub probs: Vec<Vec<f64>>,
}

impl FrameGrid {
    pub fn new(clip_id: impl Into<String>, hop_s: f64, probs: Vec<Vec<f64>>) -> Result<Self> {
        let clip_id = clip_id.into();
        if !(hop_s > 0.0 && hop_s.is_finite()) {
            return Err(Error::invalid("hop", format!("{hop_s} must be positive")));
        }
        let frames = probs.first().map_or(0, Vec::len);
        if probs.iter().any(|row| row.len() != frames) {
            return Err(Error::Shape {
                clip: clip_id,
                message: "class rows have different frame counts".into(),
            });
        }
        if let Some(v) = probs.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "probability",
                format!("{clip_id}: value {v} outside [0, 1]"),
            ));
        }
        Ok(FrameGrid {
            clip_id,
            hop_s,
            probs,
        })
    }

    pub fn zeros(clip_id: impl Into<String>, hop_s: f64, num_classes: usize, num_frames: usize) -> Self {
        FrameGrid {
            clip_id: clip_id.into(),
            hop_s,
            probs: vec![vec![0.0; num_frames]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn num_frames(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn row(&self, class_id: usize) -> &[f64] {
        &self.probs[class_id]
    }

    fn frame_center(&self, t: usize) -> f64 {
        (t as f64 + 0.5) * self.hop_s
    }
}

/// Paints events onto a frame grid, keeping the per-frame maximum score.
pub fn rasterize(events: &EventSet, hop_s: f64, num_classes: usize) -> Result<FrameGrid> {
    if !(hop_s > 0.0 && hop_s.is_finite()) {
        return Err(Error::invalid("hop", format!("{hop_s} must be positive")));
    }
    let frames = frame_count(events.clip_duration_s, hop_s);
    let mut grid = FrameGrid::zeros(events.clip_id.clone(), hop_s, num_classes, frames);
    for e in &events.events {
        if e.class_id >= num_classes {
            return Err(Error::invalid(
                "event",
                format!("class {} out of range for {num_classes} classes", e.class_id),
            ));
        }
        // start one frame early; the center test below is authoritative
        let first = ((e.onset_s / hop_s - 0.5).floor().max(1.0) - 1.0) as usize;
        for t in first..frames {
            let center = grid.frame_center(t);
            if center >= e.offset_s {
                break;
            }
            if center >= e.onset_s {
                let v = &mut grid.probs[e.class_id][t];
                *v = v.max(e.score);
            }
        }
    }
    Ok(grid)
}

/// Turns each maximal run of frames at or above the class threshold into an
/// event spanning the run's frame edges, scored by the run's peak.
///
/// Offsets are clipped to the clip duration; runs that start past the end of
/// the clip are dropped.
pub fn binarize_to_events(grid: &FrameGrid, thresholds: &[f64], clip_duration_s: f64) -> Result<EventSet> {
    if thresholds.len() != grid.num_classes() {
        return Err(Error::Shape {
            clip: grid.clip_id.clone(),
            message: format!(
                "{} thresholds for {} classes",
                thresholds.len(),
                grid.num_classes()
            ),
        });
    }
    let mut events = Vec::new();
    for (class_id, (row, &threshold)) in grid.probs.iter().zip(thresholds).enumerate() {
        binarize_row(row, threshold, grid.hop_s, clip_duration_s, |onset, offset, peak| {
            events.push(Event {
                class_id,
                onset_s: onset,
                offset_s: offset,
                score: peak,
            })
        });
    }
    EventSet::new(grid.clip_id.clone(), clip_duration_s, events)
}

/// Run-length detection on a single class row.
pub(crate) fn binarize_row(
    row: &[f64],
    threshold: f64,
    hop_s: f64,
    clip_duration_s: f64,
    mut emit: impl FnMut(f64, f64, f64),
) {
    let mut t = 0;
    while t < row.len() {
        if row[t] < threshold {
            t += 1;
            continue;
        }
        let start = t;
        let mut peak = row[t];
        while t < row.len() && row[t] >= threshold {
            peak = peak.max(row[t]);
            t += 1;
        }
        let onset = start as f64 * hop_s;
        let offset = (t as f64 * hop_s).min(clip_duration_s);
        if onset < offset {
            emit(onset, offset, peak);
        }
    }
}

/// Keeps only the highest-scoring event of every connected group of
/// overlapping same-class events.
///
/// Ties go to the earlier onset, then the longer event. Survivors keep their
/// input order.
pub fn de_overlap(events: &EventSet) -> EventSet {
    let evs = &events.events;
    let mut order: Vec<usize> = (0..evs.len()).collect();
    order.sort_by(|&a, &b| {
        evs[a]
            .class_id
            .cmp(&evs[b].class_id)
            .then(evs[a].onset_s.total_cmp(&evs[b].onset_s))
    });

    let mut keep = vec![false; evs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut best = order[i];
        let mut reach = evs[best].offset_s;
        let class_id = evs[best].class_id;
        let mut j = i + 1;
        while j < order.len() {
            let cand = &evs[order[j]];
            if cand.class_id != class_id || cand.onset_s >= reach {
                break;
            }
            reach = reach.max(cand.offset_s);
            if better(cand, order[j], &evs[best], best) {
                best = order[j];
            }
            j += 1;
        }
        keep[best] = true;
        i = j;
    }

    EventSet {
        clip_id: events.clip_id.clone(),
        clip_duration_s: events.clip_duration_s,
        events: evs
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(e, _)| *e)
            .collect(),
    }
}

fn better(a: &Event, ia: usize, b: &Event, ib: usize) -> bool {
    let ord = a
        .score
        .total_cmp(&b.score)
        .then(b.onset_s.total_cmp(&a.onset_s))
        .then(a.duration().total_cmp(&b.duration()))
        .then(ib.cmp(&ia));
    ord == Ordering::Greater
}
