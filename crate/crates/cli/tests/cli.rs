#[path = "../../core/tests/common/mod.rs"]
mod common;
mod fixture;

use std::fs;

use fixture::{ok, sedfuse};

fn overall(csv: &str, column: usize) -> f64 {
    let line = csv.lines().find(|l| l.starts_with("overall,")).unwrap();
    line.split(',').nth(column).unwrap().parse().unwrap()
}

#[test]
fn evaluate_writes_one_row_per_class_plus_overall() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, a, _) = common::complementary_models();
    let dev = fixture::write_dataset(dir.path(), &ds);
    fixture::write_model(dir.path(), &a, &ds.class_names);
    let gt = dev.gt.to_str().unwrap();
    let dur = dev.durations.to_str().unwrap();
    ok(dir.path(), &["evaluate", "--gt", gt, "--durations", dur, "--scores", "A", "--hop", "1", "--out", "e.csv"]);
    let text = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "class,psds1,psds2");
    assert_eq!(lines.len(), 1 + ds.class_names.len() + 1);
    assert!(dir.path().join("e.csv.manifest.json").exists());
}

#[test]
fn fusing_one_model_reproduces_its_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, a, _) = common::complementary_models();
    let dev = fixture::write_dataset(dir.path(), &ds);
    let a_dir = fixture::write_model(dir.path(), &a, &ds.class_names);
    ok(
        dir.path(),
        &[
            "fuse", "--model", "A", "--gt", dev.gt.to_str().unwrap(), "--durations",
            dev.durations.to_str().unwrap(), "--hop", "1", "--out", "F",
        ],
    );
    for entry in fs::read_dir(&a_dir).unwrap() {
        let p = entry.unwrap().path();
        let fused = dir.path().join("F").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(fused).unwrap());
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = sedfuse(dir.path(), &["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sedfuse(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(sedfuse(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(sedfuse(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn validation_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gt.tsv"), "filename\tonset\toffset\tevent_label\na\t1\tx\tDog\n").unwrap();
    fs::write(dir.path().join("d.tsv"), "filename\tduration\na\t10\n").unwrap();
    fs::create_dir(dir.path().join("S")).unwrap();
    let out = sedfuse(
        dir.path(),
        &["evaluate", "--gt", "gt.tsv", "--durations", "d.tsv", "--scores", "S", "--hop", "1", "--out", "o.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gt.tsv:2:"), "{err}");

    fs::write(dir.path().join("bad.cfg"), "hop_s = 1\npsds1.rho_dtc = 2\n").unwrap();
    let out = sedfuse(dir.path(), &["--config", "bad.cfg", "simulate-ssl", "--report", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg"));
}

#[test]
fn tampered_manifest_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate-ssl", "--epochs", "1", "--burn-in-epochs", "1", "--report", "r.csv"]);
    let path = dir.path().join("r.csv.manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    fs::write(&path, m.to_string()).unwrap();
    assert_eq!(sedfuse(dir.path(), &["replay", "r.csv.manifest.json"]).status.code(), Some(2));
}

#[test]
fn changed_inputs_block_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, a, _) = common::complementary_models();
    let dev = fixture::write_dataset(dir.path(), &ds);
    fixture::write_model(dir.path(), &a, &ds.class_names);
    let args = [
        "evaluate", "--gt", dev.gt.to_str().unwrap(), "--durations", dev.durations.to_str().unwrap(),
        "--scores", "A", "--hop", "1", "--out", "e.csv",
    ];
    ok(dir.path(), &args);
    fs::write(&dev.durations, "filename\tduration\nx\t20\ny\t21\n").unwrap();
    let out = sedfuse(dir.path(), &["replay", "e.csv.manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn evaluate_fuse_tune_evaluate_does_not_lose_psds() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (ds, a, b) = common::complementary_models();
    let dev = fixture::write_dataset(root, &ds);
    fixture::write_model(root, &a, &ds.class_names);
    fixture::write_model(root, &b, &ds.class_names);
    let (gt, dur) = (dev.gt.to_str().unwrap(), dev.durations.to_str().unwrap());
    let eval = |scores: &str, out: &str, extra: &[&str]| -> String {
        let mut args = vec!["evaluate", "--gt", gt, "--durations", dur, "--scores", scores, "--hop", "1", "--out", out];
        args.extend_from_slice(extra);
        ok(root, &args);
        fs::read_to_string(root.join(out)).unwrap()
    };
    let best_single = overall(&eval("A", "a.csv", &[]), 1).max(overall(&eval("B", "b.csv", &[]), 1));
    ok(root, &["fuse", "--model", "A", "--model", "B", "--gt", gt, "--durations", dur, "--hop", "1", "--out", "F"]);
    ok(
        root,
        &["tune-windows", "--gt", gt, "--durations", dur, "--scores", "F", "--hop", "1", "--search-max", "9", "--out", "w.csv"],
    );
    let tuned = overall(&eval("F", "f.csv", &["--windows", "w.csv"]), 1);
    assert!(tuned >= best_single, "{tuned} < {best_single}");
}

#[test]
fn match_loss_reports_every_clip() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _, _) = common::complementary_models();
    let dev = fixture::write_dataset(dir.path(), &ds);
    fixture::write_predictions(dir.path(), &ds);
    ok(
        dir.path(),
        &[
            "match-loss", "--gt", dev.gt.to_str().unwrap(), "--durations", dev.durations.to_str().unwrap(),
            "--predictions", "predictions.tsv", "--out", "l.csv",
        ],
    );
    let text = fs::read_to_string(dir.path().join("l.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + ds.ground_truth.len() + 1);
    assert!(lines.last().unwrap().starts_with("mean,"));
    for l in &lines[1..] {
        let total: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(total.is_finite() && total >= 0.0);
    }
}
