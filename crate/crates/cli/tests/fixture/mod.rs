//! On-disk fixtures and a thin wrapper around the built binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sedfuse::dataio::{write_detections, write_frame_scores, Dataset, ScoreBundle};

pub fn sedfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sedfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sedfuse(dir, args);
    assert!(
        out.status.success(),
        "sedfuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub struct DevFiles {
    pub gt: PathBuf,
    pub durations: PathBuf,
}

/// Writes ground truth and durations of `ds` as `gt.tsv` / `durations.tsv`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> DevFiles {
    let gt = dir.join("gt.tsv");
    fs::write(&gt, write_detections(&ds.ground_truth, &ds.class_names).unwrap()).unwrap();
    let durations = dir.join("durations.tsv");
    let mut text = String::from("filename\tduration\n");
    for (clip, d) in &ds.durations {
        text.push_str(&format!("{clip}\t{d}\n"));
    }
    fs::write(&durations, text).unwrap();
    DevFiles { gt, durations }
}

pub fn write_model(dir: &Path, bundle: &ScoreBundle, classes: &[String]) -> PathBuf {
    let out = dir.join(&bundle.model_id);
    write_frame_scores(bundle, classes, &out).unwrap();
    out
}

/// Predictions TSV with one prediction per ground-truth event (slightly
/// shifted) plus one spurious prediction per clip.
pub fn write_predictions(dir: &Path, ds: &Dataset) -> PathBuf {
    let classes = &ds.class_names;
    let mut text = format!("filename\tcenter\tlength\t{}\tno_event\n", classes.join("\t"));
    let row = |clip: &str, center: f64, length: f64, hot: Option<usize>| -> String {
        let n = classes.len();
        let mut probs = vec![0.1 / n as f64; n];
        let mut no_event = 0.9;
        if let Some(c) = hot {
            probs[c] += 0.7;
            no_event -= 0.7;
        }
        let cols: Vec<String> = probs.iter().chain([&no_event]).map(|p| format!("{p}")).collect();
        format!("{clip}\t{center}\t{length}\t{}\n", cols.join("\t"))
    };
    for (clip, set) in &ds.ground_truth {
        let d = set.clip_duration_s;
        for e in &set.events {
            let center = ((e.onset_s + e.offset_s) / 2.0 / d + 0.01).min(0.9);
            let length = ((e.offset_s - e.onset_s) / d).min(2.0 * center.min(1.0 - center));
            text.push_str(&row(clip, center, length, Some(e.class_id)));
        }
        text.push_str(&row(clip, 0.5, 0.1, None));
    }
    let path = dir.join("predictions.tsv");
    fs::write(&path, text).unwrap();
    path
}

pub fn tree_bytes(path: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    if path.is_dir() {
        for e in fs::read_dir(path).unwrap() {
            let p = e.unwrap().path();
            out.insert(p.clone(), fs::read(&p).unwrap());
        }
    } else {
        out.insert(path.to_path_buf(), fs::read(path).unwrap());
    }
    out
}
