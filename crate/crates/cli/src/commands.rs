use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Parser;
use log::info;

use sedfuse::assignment::{
    classification_loss, hungarian_assign, localization_loss, matching_cost, no_object_loss, tagging_loss,
    targets_from_events,
};
use sedfuse::config::{Config, Profile};
use sedfuse::dataio::{
    clip_key, load_frame_scores, parse_clip_tags, parse_predictions, read_durations, read_ground_truth,
    write_frame_scores, Dataset, ScoreBundle,
};
use sedfuse::fusion::{compute_weights, format_weights_csv, fuse, parse_weights_csv};
use sedfuse::postproc::{apply_to_bundle, format_window_csv, parse_window_csv, tune_windows};
use sedfuse::psds::{format_roc_points, PsdsEvaluator, PsdsReport};
use sedfuse::ssl::{simulate, AugmentSpec, SslConfig, SynthSpec};
use sedfuse::ClipLabel;

use crate::manifest::{self, RunManifest};
use crate::{Cli, Command, DevSet, EvaluateArgs, FuseArgs, MatchLossArgs, SimulateArgs, TuneArgs};

pub fn run(cli: &Cli, args: &[String]) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => {
            let name = path.display().to_string();
            match Config::parse(&read(path)?, &name) {
                Ok(c) => c,
                Err(e @ sedfuse::Error::Parse { .. }) => return Err(e.into()),
                Err(e) => return Err(anyhow!(e).context(name)),
            }
        }
        None => Config::default(),
    };
    let (name, primary, mut m) = match &cli.command {
        Command::Evaluate(a) => ("evaluate", a.out.clone(), evaluate(a, &mut config)?),
        Command::Fuse(a) => ("fuse", a.out.clone(), fuse_cmd(a, &mut config)?),
        Command::TuneWindows(a) => ("tune-windows", a.out.clone(), tune(a, &mut config)?),
        Command::MatchLoss(a) => ("match-loss", a.out.clone(), match_loss(a, &config)?),
        Command::SimulateSsl(a) => ("simulate-ssl", a.report.clone(), simulate_ssl(a)?),
        Command::Replay(a) => return replay(&a.path),
    };
    let mut full = RunManifest::new(name, args, config.to_text());
    if let Some(path) = &cli.config {
        full.add_input(path)?;
    }
    full.inputs.append(&mut m.inputs);
    full.outputs.append(&mut m.outputs);
    let path = cli.manifest.clone().unwrap_or_else(|| manifest::default_path(&primary));
    full.write(&path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(dev: &DevSet, config: &Config, m: &mut RunManifest) -> Result<Dataset> {
    let table = read_ground_truth(&dev.gt)?;
    let durations = read_durations(&dev.durations)?;
    m.add_input(&dev.gt)?;
    m.add_input(&dev.durations)?;
    Ok(Dataset::new(&table, durations, config.classes.clone())?)
}

/// Resolves the hop from the flag or config, recording it in the config snapshot.
fn resolve_hop(flag: Option<f64>, config: &mut Config) -> Result<f64> {
    if let Some(h) = flag {
        config.hop_s = Some(h);
        config.validate()?;
    }
    config
        .hop_s
        .ok_or_else(|| anyhow!("frame hop unknown: set `hop_s` in the config or pass --hop"))
}

fn model_id(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| anyhow!("cannot derive a model id from {}", dir.display()))
}

fn load_scores(dir: &Path, classes: &[String], hop: f64, m: &mut RunManifest) -> Result<ScoreBundle> {
    let bundle = load_frame_scores(dir, &model_id(dir)?, classes, hop)?;
    m.add_input(dir)?;
    Ok(bundle)
}

fn load_windows(path: &Path, classes: &[String], m: &mut RunManifest) -> Result<sedfuse::postproc::WindowConfig> {
    let cfg = parse_window_csv(&read(path)?, &path.display().to_string(), classes)?;
    m.add_input(path)?;
    Ok(cfg)
}

fn profile(name: &str) -> Result<Profile> {
    Ok(name.parse::<Profile>()?)
}

fn scratch() -> RunManifest {
    RunManifest::new("", &[], String::new())
}

fn evaluate(a: &EvaluateArgs, config: &mut Config) -> Result<RunManifest> {
    let mut m = scratch();
    let selected = profile(&a.profile)?;
    let hop = resolve_hop(a.hop, config)?;
    let ds = load_dataset(&a.dev, config, &mut m)?;
    let mut scores = load_scores(&a.scores, &ds.class_names, hop, &mut m)?;
    if let Some(w) = &a.windows {
        scores = apply_to_bundle(&scores, &load_windows(w, &ds.class_names, &mut m)?)?;
    }
    let run = |p: Profile| -> Result<PsdsReport> {
        Ok(PsdsEvaluator::new(&ds, *config.params(p), config.thresholds.clone())?.evaluate(&scores)?)
    };
    let r1 = run(Profile::Psds1)?;
    let r2 = run(Profile::Psds2)?;

    let mut out = String::from("class,psds1,psds2\n");
    for (c, name) in ds.class_names.iter().enumerate() {
        out.push_str(&format!("{name},{:.9},{:.9}\n", r1.per_class[c], r2.per_class[c]));
    }
    out.push_str(&format!("overall,{:.9},{:.9}\n", r1.overall, r2.overall));
    write(&a.out, &out)?;
    m.add_output(&a.out)?;
    if let Some(path) = &a.roc_out {
        let report = if selected == Profile::Psds1 { &r1 } else { &r2 };
        write(path, &format_roc_points(&report.points, &ds.class_names))?;
        m.add_output(path)?;
    }
    print!("{out}");
    Ok(m)
}

/// Class vocabulary from the config, else from the header of the first score CSV.
fn classes_from_scores(dir: &Path, config: &Config) -> Result<Vec<String>> {
    if let Some(c) = &config.classes {
        return Ok(c.clone());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let first = files
        .first()
        .ok_or_else(|| anyhow!("{} contains no .csv files", dir.display()))?;
    let text = read(first)?;
    let header = text.lines().next().unwrap_or("");
    Ok(header.split(',').map(|s| s.trim().to_string()).collect())
}

fn fuse_cmd(a: &FuseArgs, config: &mut Config) -> Result<RunManifest> {
    let mut m = scratch();
    let selected = profile(&a.profile)?;
    let hop = resolve_hop(a.hop, config)?;
    let ids = a.models.iter().map(|d| model_id(d)).collect::<Result<Vec<_>>>()?;
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        bail!("model directories must have distinct names: {ids:?}");
    }
    let dataset = match (&a.gt, &a.durations) {
        (Some(gt), Some(durations)) => Some(load_dataset(
            &DevSet {
                gt: gt.clone(),
                durations: durations.clone(),
            },
            config,
            &mut m,
        )?),
        _ => None,
    };
    let classes = match &dataset {
        Some(ds) => ds.class_names.clone(),
        None => classes_from_scores(&a.models[0], config)?,
    };
    let bundles = a
        .models
        .iter()
        .map(|d| load_scores(d, &classes, hop, &mut m))
        .collect::<Result<Vec<_>>>()?;

    let weights = match (&a.weights, &dataset) {
        (Some(path), _) => {
            m.add_input(path)?;
            parse_weights_csv(&read(path)?, &path.display().to_string(), &ids, &classes)?
        }
        (None, Some(ds)) => {
            let eval = PsdsEvaluator::new(ds, *config.params(selected), config.thresholds.clone())?;
            let per_model = bundles
                .iter()
                .map(|b| Ok(eval.evaluate(b)?.per_class))
                .collect::<Result<Vec<_>>>()?;
            compute_weights(&per_model)?
        }
        (None, None) => bail!("fuse needs either --weights or --gt with --durations"),
    };
    let mut fused = fuse(&bundles, &weights, "fused")?;
    if let Some(w) = &a.windows {
        fused = apply_to_bundle(&fused, &load_windows(w, &classes, &mut m)?)?;
    }
    write_frame_scores(&fused, &classes, &a.out)?;
    m.add_output(&a.out)?;
    if let Some(path) = &a.weights_out {
        write(path, &format_weights_csv(&weights, &ids, &classes))?;
        m.add_output(path)?;
    }
    Ok(m)
}

fn tune(a: &TuneArgs, config: &mut Config) -> Result<RunManifest> {
    let mut m = scratch();
    let selected = profile(&a.profile)?;
    if let Some(n) = a.search_max {
        config.window.search_max = n;
    }
    if a.tune_mean {
        config.window.tune_mean = true;
    }
    config.validate()?;
    let hop = resolve_hop(a.hop, config)?;
    let ds = load_dataset(&a.dev, config, &mut m)?;
    let scores = load_scores(&a.scores, &ds.class_names, hop, &mut m)?;
    let eval = PsdsEvaluator::new(&ds, *config.params(selected), config.thresholds.clone())?;
    let windows = tune_windows(&eval, &scores, &config.window)?;
    write(&a.out, &format_window_csv(&windows, &ds.class_names))?;
    m.add_output(&a.out)?;
    Ok(m)
}

fn match_loss(a: &MatchLossArgs, config: &Config) -> Result<RunManifest> {
    let mut m = scratch();
    let ds = load_dataset(&a.dev, config, &mut m)?;
    let classes = &ds.class_names;
    let preds = parse_predictions(&read(&a.predictions)?, &a.predictions.display().to_string(), classes)?;
    m.add_input(&a.predictions)?;
    let tags = match &a.tags {
        Some(path) => {
            m.add_input(path)?;
            Some(parse_clip_tags(&read(path)?, &path.display().to_string(), classes)?)
        }
        None => None,
    };
    let known = |clip: &str| ds.ground_truth.contains_key(clip) || ds.ground_truth.keys().any(|k| clip_key(k) == clip);
    if let Some(clip) = preds.keys().find(|c| !known(c)) {
        bail!("{}: clip `{clip}` is not in the durations file", a.predictions.display());
    }

    let w = &config.loss;
    let mut out = String::from("clip,num_targets,num_predictions,match_cost,loc_loss,cls_loss,tag_loss,no_object_loss,total\n");
    let mut sums = [0.0; 6];
    for (clip, set) in &ds.ground_truth {
        let clip_preds = preds
            .get(clip)
            .or_else(|| preds.get(clip_key(clip)))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let targets = targets_from_events(set)?;
        let per_clip = || -> Result<[f64; 6]> {
            let cost = matching_cost(&targets, clip_preds, w)?;
            let matched = hungarian_assign(&cost)?;
            let loc = localization_loss(&targets, clip_preds, &matched, w)?;
            let cls = classification_loss(&targets, clip_preds, &matched)?;
            let no_obj = no_object_loss(clip_preds, &matched, w.no_object_weight);
            let predicted_tags: Vec<f64> = match tags.as_ref().and_then(|t| t.get(clip).or_else(|| t.get(clip_key(clip)))) {
                Some(t) => t.clone(),
                None => (0..classes.len())
                    .map(|c| clip_preds.iter().map(|p| p.class_probs[c]).fold(0.0, f64::max))
                    .collect(),
            };
            let tag = tagging_loss(&ClipLabel::from_events(set, classes.len()), &predicted_tags)?;
            Ok([matched.total_cost, loc, cls, tag, no_obj, loc + cls + tag + no_obj])
        };
        let row = per_clip().with_context(|| format!("clip `{clip}`"))?;
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        out.push_str(&format!("{clip},{},{}", targets.len(), clip_preds.len()));
        for v in row {
            out.push_str(&format!(",{v:.9}"));
        }
        out.push('\n');
    }
    let n = ds.ground_truth.len().max(1) as f64;
    out.push_str("mean,,");
    for s in sums {
        out.push_str(&format!(",{:.9}", s / n));
    }
    out.push('\n');
    write(&a.out, &out)?;
    m.add_output(&a.out)?;
    Ok(m)
}

fn simulate_ssl(a: &SimulateArgs) -> Result<RunManifest> {
    let mut m = scratch();
    let d = SslConfig::default();
    let cfg = SslConfig {
        seed: a.seed,
        epochs: a.epochs.unwrap_or(d.epochs),
        burn_in_epochs: a.burn_in_epochs.unwrap_or(d.burn_in_epochs),
        lr_alpha: a.lr.unwrap_or(d.lr_alpha),
        ema_gamma: a.ema_gamma.unwrap_or(d.ema_gamma),
        mixup_beta: a.mixup_beta.unwrap_or(d.mixup_beta),
        focal_gamma: a.focal_gamma.unwrap_or(d.focal_gamma),
        focal_alpha: a.focal_alpha.unwrap_or(d.focal_alpha),
        use_mixup: !a.no_mixup,
        use_focal: !a.no_focal,
        asymmetric_aug: !a.no_asym_aug,
        use_ema: !a.no_ema,
        ..d
    };
    let report = simulate(&SynthSpec::default(), &cfg, &AugmentSpec::default())?;
    write(&a.report, &report.to_csv())?;
    m.add_output(&a.report)?;
    println!(
        "burn_in_f1={:.6} student_f1={:.6} teacher_f1={:.6}",
        report.burn_in_f1, report.student_f1, report.teacher_f1
    );
    Ok(m)
}

fn replay(path: &Path) -> Result<()> {
    let recorded = RunManifest::read(path)?;
    recorded.verify_inputs()?;
    let argv: Vec<String> = std::iter::once("sedfuse".to_string())
        .chain(recorded.args.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| anyhow!("manifest arguments do not parse: {e}"))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a manifest cannot describe a replay");
    }
    run(&cli, &recorded.args)?;
    let mut mismatched = Vec::new();
    for f in &recorded.outputs {
        if manifest::sha256_file(Path::new(&f.path))? != f.sha256 {
            mismatched.push(f.path.clone());
        }
    }
    if !mismatched.is_empty() {
        return Err(sedfuse::Error::Invariant(format!(
            "replay produced different outputs: {}",
            mismatched.join(", ")
        ))
        .into());
    }
    println!("replay ok: {} outputs identical", recorded.outputs.len());
    Ok(())
}
