//! Class-wise PSDS-weighted fusion of frame probabilities.
//!
//! Each model `i` contributes to class `c` in proportion to its class-specific
//! PSDS on a development set: `w[i][c] = PSDS[i][c] / Σ_k PSDS[k][c]`, and the
//! fused probability is `Σ_i w[i][c]·p[i][c][t]`.

use std::collections::BTreeMap;

use crate::dataio::ScoreBundle;
use crate::events::FrameGrid;
use crate::{Error, Result};

/// Fusion coefficients, `weights[model][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub weights: Vec<Vec<f64>>,
}

impl FusionWeights {
    /// Validates non-negativity and per-class normalization.
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        let classes = weights.first().map_or(0, Vec::len);
        if weights.is_empty() || weights.iter().any(|w| w.len() != classes) {
            return Err(Error::invalid("fusion weights", "need a non-empty rectangular matrix"));
        }
        if weights.iter().flatten().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("fusion weights", "weights must be finite and >= 0"));
        }
        for c in 0..classes {
            let sum: f64 = weights.iter().map(|w| w[c]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "fusion weights",
                    format!("class {c} weights sum to {sum}"),
                ));
            }
        }
        Ok(FusionWeights { weights })
    }

    pub fn num_models(&self) -> usize {
        self.weights.len()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// Weights proportional to each model's class-specific PSDS
/// (`psds[model][class]`). A class where every model scores zero gets
/// uniform weights.
pub fn compute_weights(psds: &[Vec<f64>]) -> Result<FusionWeights> {
    let n = psds.len();
    let classes = psds.first().map_or(0, Vec::len);
    if n == 0 || psds.iter().any(|r| r.len() != classes) {
        return Err(Error::invalid("psds matrix", "need a non-empty rectangular matrix"));
    }
    if psds.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("psds matrix", "entries must be finite and >= 0"));
    }
    let mut weights = vec![vec![0.0; classes]; n];
    for c in 0..classes {
        let total: f64 = psds.iter().map(|r| r[c]).sum();
        if total > 0.0 {
            for i in 0..n {
                weights[i][c] = psds[i][c] / total;
            }
        } else {
            log::warn!("class {c}: every model has zero PSDS, using uniform fusion weights");
            for w in weights.iter_mut() {
                w[c] = 1.0 / n as f64;
            }
        }
    }
    FusionWeights::new(weights)
}

/// Fuses `bundles` with `w`; bundle `i` uses weight row `i`.
///
/// Clip sets, hop, and class count must agree. Frame counts may differ by one
/// frame, in which case every model is truncated to the shortest grid.
pub fn fuse(bundles: &[ScoreBundle], w: &FusionWeights, model_id: &str) -> Result<ScoreBundle> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("fusion", "no models to fuse"))?;
    if bundles.len() != w.num_models() {
        return Err(Error::invalid(
            "fusion",
            format!("{} models but {} weight rows", bundles.len(), w.num_models()),
        ));
    }
    for b in &bundles[1..] {
        if b.hop_s != first.hop_s {
            return Err(Error::invalid(
                "fusion",
                format!("model `{}` hop {} differs from {}", b.model_id, b.hop_s, first.hop_s),
            ));
        }
        if let Some(clip) = b
            .grids
            .keys()
            .find(|k| !first.grids.contains_key(*k))
            .or_else(|| first.grids.keys().find(|k| !b.grids.contains_key(*k)))
        {
            return Err(Error::Shape {
                clip: clip.clone(),
                message: format!("clip sets of `{}` and `{}` differ", first.model_id, b.model_id),
            });
        }
    }

    let mut grids = BTreeMap::new();
    for key in first.grids.keys() {
        let members: Vec<&FrameGrid> = bundles.iter().map(|b| &b.grids[key]).collect();
        grids.insert(key.clone(), fuse_clip(key, &members, w)?);
    }
    ScoreBundle::new(model_id, first.hop_s, grids)
}

fn fuse_clip(key: &str, members: &[&FrameGrid], w: &FusionWeights) -> Result<FrameGrid> {
    let classes = members[0].num_classes();
    if classes != w.num_classes() {
        return Err(Error::Shape {
            clip: key.to_string(),
            message: format!("{classes} classes in scores, {} in weights", w.num_classes()),
        });
    }
    if let Some(g) = members.iter().find(|g| g.num_classes() != classes) {
        return Err(Error::Shape {
            clip: key.to_string(),
            message: format!("class dimension {} vs {classes}", g.num_classes()),
        });
    }
    let shortest = members.iter().map(|g| g.num_frames()).min().unwrap_or(0);
    let longest = members.iter().map(|g| g.num_frames()).max().unwrap_or(0);
    if longest - shortest > 1 {
        return Err(Error::Shape {
            clip: key.to_string(),
            message: format!("frame dimension differs by {} frames", longest - shortest),
        });
    }

    let probs = (0..classes)
        .map(|c| {
            (0..shortest)
                .map(|t| {
                    let v: f64 = members
                        .iter()
                        .zip(&w.weights)
                        .map(|(g, wi)| wi[c] * g.probs[c][t])
                        .sum();
                    v.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    FrameGrid::new(members[0].clip_id.clone(), members[0].hop_s, probs)
}

/// Parses a weights CSV `model,class,weight` into a matrix ordered by
/// `model_ids` and `class_names`.
pub fn parse_weights_csv(text: &str, source_name: &str, model_ids: &[String], class_names: &[String]) -> Result<FusionWeights> {
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
    let (mi, ci, wi) = (col("model")?, col("class")?, col("weight")?);
    let mut weights = vec![vec![f64::NAN; class_names.len()]; model_ids.len()];
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        let m = model_ids
            .iter()
            .position(|id| id == &rec[mi])
            .ok_or_else(|| Error::parse(source_name, line, format!("unknown model `{}`", &rec[mi])))?;
        let c = class_names
            .iter()
            .position(|n| n == &rec[ci])
            .ok_or_else(|| Error::parse(source_name, line, format!("unknown class `{}`", &rec[ci])))?;
        let v: f64 = rec[wi]
            .parse()
            .map_err(|_| Error::parse(source_name, line, format!("`{}` is not a number", &rec[wi])))?;
        weights[m][c] = v;
    }
    if weights.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::invalid(
            "fusion weights",
            format!("{source_name}: every (model, class) pair needs a weight"),
        ));
    }
    FusionWeights::new(weights)
}

/// Formats weights as `model,class,weight` CSV.
pub fn format_weights_csv(w: &FusionWeights, model_ids: &[String], class_names: &[String]) -> String {
    let mut out = String::from("model,class,weight\n");
    for (m, row) in model_ids.iter().zip(&w.weights) {
        for (c, v) in class_names.iter().zip(row) {
            out.push_str(&format!("{m},{c},{v}\n"));
        }
    }
    out
}
