//! DCASE-convention file formats.
//!
//! * ground truth and detections: TSV `filename\tonset\toffset\tevent_label`;
//!   a row with empty onset, offset and label lists a clip without events
//! * durations: TSV `filename\tduration`
//! * frame scores: one CSV per clip, header of class names, one row per frame
//!
//! Score files are keyed by their file stem. A dataset clip `a.wav` finds the
//! scores stored in `a.csv` (see [`clip_key`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::assignment::Prediction;
use crate::events::{Event, EventSet, FrameGrid, NormalizedBox};
use crate::{Error, Result};

/// Event row as read from a TSV, before labels are mapped to class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub label: String,
    pub onset_s: f64,
    pub offset_s: f64,
}

/// Events grouped by clip, in file order within a clip.
pub type EventTable = BTreeMap<String, Vec<LabeledEvent>>;

/// Ground truth, durations and class vocabulary of one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One entry per clip of `durations`, possibly without events.
    pub ground_truth: BTreeMap<String, EventSet>,
    pub durations: BTreeMap<String, f64>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Assembles a dataset. Without explicit `class_names` the vocabulary is
    /// the sorted set of ground-truth labels.
    pub fn new(
        table: &EventTable,
        durations: BTreeMap<String, f64>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let class_names = match class_names {
            Some(names) => {
                let unique: BTreeSet<_> = names.iter().collect();
                if unique.len() != names.len() || names.is_empty() {
                    return Err(Error::invalid(
                        "class names",
                        "must be non-empty and unique",
                    ));
                }
                names
            }
            None => table
                .values()
                .flatten()
                .map(|e| e.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        if class_names.is_empty() {
            return Err(Error::invalid(
                "class names",
                "ground truth has no events and no class list was given",
            ));
        }
        for clip in table.keys() {
            if !durations.contains_key(clip) {
                return Err(Error::invalid(
                    "dataset",
                    format!("ground-truth clip `{clip}` has no duration entry"),
                ));
            }
        }
        let mut ground_truth = BTreeMap::new();
        for (clip, &duration) in &durations {
            let rows = table.get(clip).map(Vec::as_slice).unwrap_or(&[]);
            let events = to_events(clip, rows, &class_names)?;
            ground_truth.insert(clip.clone(), EventSet::new(clip.clone(), duration, events)?);
        }
        Ok(Dataset {
            ground_truth,
            durations,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.durations.values().sum()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == label)
    }

    /// Number of ground-truth events per class.
    pub fn gt_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in self.ground_truth.values().flat_map(|s| &s.events) {
            counts[e.class_id] += 1;
        }
        counts
    }
}

/// Maps labeled rows of one clip to events using a class vocabulary.
pub fn to_events(clip: &str, rows: &[LabeledEvent], class_names: &[String]) -> Result<Vec<Event>> {
    rows.iter()
        .map(|r| {
            let class_id = class_names
                .iter()
                .position(|n| *n == r.label)
                .ok_or_else(|| {
                    Error::invalid("event label", format!("{clip}: unknown class `{}`", r.label))
                })?;
            Event::annotated(class_id, r.onset_s, r.offset_s)
        })
        .collect()
}

fn header_index(header: &[&str], column: &str, source_name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::MissingColumn {
            source_name: source_name.to_string(),
            column: column.to_string(),
        })
}

fn parse_seconds(field: &str, what: &str, source_name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(source_name, line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(source_name, line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

type NumberedRow<'a> = (usize, Vec<&'a str>);

/// Splits TSV text into `(line_number, fields)` for non-empty lines after the header.
fn tsv_rows(text: &str) -> (Option<Vec<&str>>, Vec<NumberedRow<'_>>) {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let header = lines.next().map(|(_, h)| h.split('\t').collect());
    let rows = lines.map(|(n, l)| (n, l.split('\t').collect())).collect();
    (header, rows)
}

/// Parses a ground-truth or detection TSV.
pub fn parse_ground_truth(text: &str, source_name: &str) -> Result<EventTable> {
    let (header, rows) = tsv_rows(text);
    let header = header.ok_or_else(|| Error::parse(source_name, 1, "missing header"))?;
    let fi = header_index(&header, "filename", source_name)?;
    let oi = header_index(&header, "onset", source_name)?;
    let fo = header_index(&header, "offset", source_name)?;
    let li = header_index(&header, "event_label", source_name)?;
    let width = [fi, oi, fo, li].into_iter().max().unwrap_or(0) + 1;

    let mut table = EventTable::new();
    for (line, fields) in rows {
        let field = |i: usize| fields.get(i).map_or("", |f| f.trim());
        if fields.len() < width && !(fields.len() == 1 && !field(fi).is_empty()) {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        let clip = field(fi);
        if clip.is_empty() {
            return Err(Error::parse(source_name, line, "empty filename"));
        }
        let entry = table.entry(clip.to_string()).or_default();
        if field(oi).is_empty() && field(fo).is_empty() && field(li).is_empty() {
            continue;
        }
        let onset = parse_seconds(field(oi), "onset", source_name, line)?;
        let offset = parse_seconds(field(fo), "offset", source_name, line)?;
        if onset < 0.0 || onset >= offset {
            return Err(Error::parse(
                source_name,
                line,
                format!("onset {onset} must be >= 0 and before offset {offset}"),
            ));
        }
        let label = field(li);
        if label.is_empty() {
            return Err(Error::parse(source_name, line, "empty event_label"));
        }
        entry.push(LabeledEvent {
            label: label.to_string(),
            onset_s: onset,
            offset_s: offset,
        });
    }
    for rows in table.values_mut() {
        rows.sort_by(|a, b| {
            a.onset_s
                .total_cmp(&b.onset_s)
                .then(a.offset_s.total_cmp(&b.offset_s))
                .then_with(|| a.label.cmp(&b.label))
        });
    }
    Ok(table)
}

/// Parses a durations TSV.
pub fn parse_durations(text: &str, source_name: &str) -> Result<BTreeMap<String, f64>> {
    let (header, rows) = tsv_rows(text);
    let header = header.ok_or_else(|| Error::parse(source_name, 1, "missing header"))?;
    let fi = header_index(&header, "filename", source_name)?;
    let di = header_index(&header, "duration", source_name)?;
    let mut out = BTreeMap::new();
    for (line, fields) in rows {
        let (Some(clip), Some(d)) = (fields.get(fi), fields.get(di)) else {
            return Err(Error::parse(source_name, line, "expected 2 columns"));
        };
        let d = parse_seconds(d, "duration", source_name, line)?;
        if d <= 0.0 {
            return Err(Error::parse(source_name, line, format!("duration {d} must be positive")));
        }
        if out.insert(clip.trim().to_string(), d).is_some() {
            return Err(Error::parse(
                source_name,
                line,
                format!("duplicate filename `{}`", clip.trim()),
            ));
        }
    }
    Ok(out)
}

/// Writes events in the ground-truth TSV schema with 6 fractional digits.
pub fn write_detections(events: &BTreeMap<String, EventSet>, class_names: &[String]) -> Result<String> {
    let mut out = String::from("filename\tonset\toffset\tevent_label\n");
    for (clip, set) in events {
        for e in &set.events {
            let label = class_names.get(e.class_id).ok_or_else(|| {
                Error::invalid("event", format!("{clip}: class {} has no name", e.class_id))
            })?;
            out.push_str(&format!("{clip}\t{:.6}\t{:.6}\t{label}\n", e.onset_s, e.offset_s));
        }
    }
    Ok(out)
}

/// Key under which a clip's scores are stored: the clip id without its extension.
pub fn clip_key(clip_id: &str) -> &str {
    Path::new(clip_id)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(clip_id)
}

/// Frame probabilities of one model over a set of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub model_id: String,
    pub hop_s: f64,
    /// Keyed by [`clip_key`].
    pub grids: BTreeMap<String, FrameGrid>,
}

impl ScoreBundle {
    pub fn new(model_id: impl Into<String>, hop_s: f64, grids: BTreeMap<String, FrameGrid>) -> Result<Self> {
        let model_id = model_id.into();
        let classes = grids.values().next().map(FrameGrid::num_classes);
        for (key, g) in &grids {
            if g.hop_s != hop_s {
                return Err(Error::Shape {
                    clip: key.clone(),
                    message: format!("hop {} differs from bundle hop {hop_s}", g.hop_s),
                });
            }
            if Some(g.num_classes()) != classes {
                return Err(Error::Shape {
                    clip: key.clone(),
                    message: "class count differs across clips".into(),
                });
            }
        }
        Ok(ScoreBundle {
            model_id,
            hop_s,
            grids,
        })
    }

    /// Looks up the grid of a dataset clip by exact key, then by [`clip_key`].
    pub fn grid_for(&self, clip_id: &str) -> Option<&FrameGrid> {
        self.grids
            .get(clip_id)
            .or_else(|| self.grids.get(clip_key(clip_id)))
    }

    pub fn num_classes(&self) -> usize {
        self.grids.values().next().map_or(0, FrameGrid::num_classes)
    }
}

/// Parses one frame-score CSV into a grid whose rows follow `class_names`.
pub fn parse_frame_scores(
    text: &str,
    source_name: &str,
    clip_id: &str,
    class_names: &[String],
    hop_s: f64,
) -> Result<FrameGrid> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let mut column_of_class = vec![usize::MAX; class_names.len()];
    for (col, name) in header.iter().enumerate() {
        let c = class_names.iter().position(|n| n == name).ok_or_else(|| {
            Error::parse(source_name, 1, format!("unknown class `{name}`"))
        })?;
        if column_of_class[c] != usize::MAX {
            return Err(Error::parse(source_name, 1, format!("duplicate class `{name}`")));
        }
        column_of_class[c] = col;
    }
    if let Some(c) = column_of_class.iter().position(|&col| col == usize::MAX) {
        return Err(Error::MissingColumn {
            source_name: source_name.to_string(),
            column: class_names[c].clone(),
        });
    }

    let mut probs = vec![Vec::new(); class_names.len()];
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        if record.len() != class_names.len() {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected {} values, found {}", class_names.len(), record.len()),
            ));
        }
        for (c, &col) in column_of_class.iter().enumerate() {
            let field = &record[col];
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(source_name, line, format!("`{field}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("probability {v} outside [0, 1]"),
                ));
            }
            probs[c].push(v);
        }
    }
    FrameGrid::new(clip_id, hop_s, probs)
}

/// Formats a grid as a frame-score CSV with columns in `class_names` order.
pub fn format_frame_scores(grid: &FrameGrid, class_names: &[String]) -> String {
    let mut out = class_names.join(",");
    out.push('\n');
    for t in 0..grid.num_frames() {
        let row: Vec<String> = grid.probs.iter().map(|r| format!("{}", r[t])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a ground-truth or detection TSV file.
pub fn read_ground_truth(path: &Path) -> Result<EventTable> {
    parse_ground_truth(&read_text(path)?, &path.display().to_string())
}

/// Reads a durations TSV file.
pub fn read_durations(path: &Path) -> Result<BTreeMap<String, f64>> {
    parse_durations(&read_text(path)?, &path.display().to_string())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.csv` of `dir` as one model's scores. Files are parsed in
/// parallel; the bundle is keyed by file stem.
pub fn load_frame_scores(
    dir: &Path,
    model_id: &str,
    class_names: &[String],
    hop_s: f64,
) -> Result<ScoreBundle> {
    let files = csv_files(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(
            "score directory",
            format!("{} contains no .csv files", dir.display()),
        ));
    }
    let grids: Vec<(String, FrameGrid)> = files
        .par_iter()
        .map(|path| {
            let key = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid("score file", format!("bad name {}", path.display())))?
                .to_string();
            let grid = parse_frame_scores(
                &read_text(path)?,
                &path.display().to_string(),
                &key,
                class_names,
                hop_s,
            )?;
            Ok((key, grid))
        })
        .collect::<Result<_>>()?;
    ScoreBundle::new(model_id, hop_s, grids.into_iter().collect())
}

/// Writes one CSV per clip into `dir`, returning the written paths.
pub fn write_frame_scores(bundle: &ScoreBundle, class_names: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(bundle.grids.len());
    for (key, grid) in &bundle.grids {
        let path = dir.join(format!("{key}.csv"));
        fs::write(&path, format_frame_scores(grid, class_names)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Event-wise predictions keyed by clip, in file order within a clip.
pub type PredictionTable = BTreeMap<String, Vec<Prediction>>;

/// Parses a predictions TSV with columns `filename`, `center`, `length`
/// (normalized box), one probability column per class and `no_event`.
///
/// A row with only the filename lists a clip without predictions.
pub fn parse_predictions(text: &str, source_name: &str, class_names: &[String]) -> Result<PredictionTable> {
    let (header, rows) = tsv_rows(text);
    let header = header.ok_or_else(|| Error::parse(source_name, 1, "missing header"))?;
    let fi = header_index(&header, "filename", source_name)?;
    let ci = header_index(&header, "center", source_name)?;
    let li = header_index(&header, "length", source_name)?;
    let class_cols = class_names
        .iter()
        .map(|c| header_index(&header, c, source_name))
        .collect::<Result<Vec<_>>>()?;
    let ni = header_index(&header, "no_event", source_name)?;

    let mut table = PredictionTable::new();
    for (line, fields) in rows {
        let field = |i: usize| fields.get(i).map_or("", |f| f.trim());
        let clip = field(fi);
        if clip.is_empty() {
            return Err(Error::parse(source_name, line, "empty filename"));
        }
        let entry = table.entry(clip.to_string()).or_default();
        if fields.len() == 1 {
            continue;
        }
        if fields.len() != header.len() {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        let num = |i: usize, what: &str| parse_seconds(field(i), what, source_name, line);
        let bbox = NormalizedBox::new(num(ci, "center")?, num(li, "length")?)
            .map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let mut probs = class_cols
            .iter()
            .zip(class_names)
            .map(|(&i, name)| num(i, name))
            .collect::<Result<Vec<_>>>()?;
        probs.push(num(ni, "no_event")?);
        let pred = Prediction::new(bbox, probs).map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        entry.push(pred);
    }
    Ok(table)
}

/// Parses clip-level tag probabilities: `filename` plus one column per class.
pub fn parse_clip_tags(text: &str, source_name: &str, class_names: &[String]) -> Result<BTreeMap<String, Vec<f64>>> {
    let (header, rows) = tsv_rows(text);
    let header = header.ok_or_else(|| Error::parse(source_name, 1, "missing header"))?;
    let fi = header_index(&header, "filename", source_name)?;
    let cols = class_names
        .iter()
        .map(|c| header_index(&header, c, source_name))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for (line, fields) in rows {
        let field = |i: usize| fields.get(i).map_or("", |f| f.trim());
        let tags = cols
            .iter()
            .zip(class_names)
            .map(|(&i, name)| {
                let v = parse_seconds(field(i), name, source_name, line)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::parse(source_name, line, format!("{name} probability {v} not in [0, 1]")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(field(fi).to_string(), tags).is_some() {
            return Err(Error::parse(source_name, line, format!("duplicate clip `{}`", field(fi))));
        }
    }
    Ok(out)
}
