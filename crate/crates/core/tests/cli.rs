use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn zshash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zshash"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("spawn zshash")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn shipped_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.cfg")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["run", "--help"], &["train", "--help"], &["--version"]] {
        assert_eq!(zshash(args).status.code(), Some(0), "{args:?}");
    }
    let help = String::from_utf8(zshash(&["train", "--help"]).stdout).unwrap();
    for needle in ["--beta", "[default: 0.9]", "--s <S>", "[default: 5]", "--omega", "--radius", "[default: 2]"] {
        assert!(help.contains(needle), "missing {needle:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(zshash(&[]).status.code(), Some(1));
    assert_eq!(zshash(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(zshash(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(zshash(&["run", "--beta", "-2", "--n-trials", "1"]).status.code(), Some(1));
    assert_eq!(zshash(&["run", "--set", "colour=red"]).status.code(), Some(1));
}

#[test]
fn run_prints_only_csv() {
    let o = zshash(&["run", "--config", p(&shipped_config()), "--n-trials", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("method,code_length,s,radius,precision,recall,f1,map,accuracy_train,accuracy_test"));
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 12));
    assert!(lines[3].contains(",mean,"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "n_trials = 1\nbits = 4\npreset = sun\nsynth_per_class = 12\n").unwrap();
    let o = zshash(&["run", "--config", p(&cfg), "--bits", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().skip(1).all(|l| l.split(',').nth(1) == Some("6")));
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn code_length_above_seen_classes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = zshash(&[
        "synth", "--out", p(&data), "--n-seen", "40", "--n-unseen", "1", "--per-class", "2", "--dim", "48",
        "--attr-dim", "12",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = zshash(&["train", "--data", p(&data.join("seen")), "--out", p(&dir.path().join("m")), "--bits", "64"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("b <= n_s"), "{}", stderr(&o));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("features.csv"), "1,1\n1,1\n1,1\n1,1\n").unwrap();
    std::fs::write(dir.path().join("labels.csv"), "0\n0\n1\n1\n").unwrap();
    std::fs::write(dir.path().join("signatures.csv"), "1,0\n0,1\n").unwrap();
    let o = zshash(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("m")), "--bits", "1", "-s", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn missing_and_malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = zshash(&["train", "--data", p(&dir.path().join("nope")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("features.csv"), "1,2\n3,x\n").unwrap();
    std::fs::write(dir.path().join("labels.csv"), "0\n1\n").unwrap();
    std::fs::write(dir.path().join("signatures.csv"), "1,0\n0,1\n").unwrap();
    let o = zshash(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.clone(), std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            files.extend(walk(&path));
        } else {
            files.push(path);
        }
    }
    files
}

#[test]
fn synth_train_extend_hash_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let model = d.join("model");
    let ext = d.join("ext");

    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o
    };
    ok(zshash(&["synth", "--out", p(&data)]));
    for f in ["features.csv", "labels.csv", "signatures.csv", "split.json", "seen/features.csv", "unseen/signatures.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let inputs_before = read_all(&data);

    ok(zshash(&["train", "--data", p(&data.join("seen")), "--out", p(&model), "--preset", "sun", "--synthesis-top-s", "5"]));
    ok(zshash(&["extend", "--model", p(&model), "--signatures", p(&data.join("unseen/signatures.csv")), "--out", p(&ext)]));
    ok(zshash(&[
        "hash", "--model", p(&model), "--features", p(&data.join("unseen/features.csv")), "--unseen", p(&ext), "--out",
        p(&d.join("unseen.bin")), "--csv", p(&d.join("unseen.csv")),
    ]));
    ok(zshash(&[
        "hash", "--model", p(&model), "--features", p(&data.join("seen/features.csv")), "--out", p(&d.join("seen.bin")),
    ]));
    let o = ok(zshash(&[
        "eval", "--codes", p(&d.join("unseen.bin")), "--labels", p(&data.join("unseen/labels.csv")),
        "--anchors", p(&ext.join("unseen_anchor_codes.bin")), "--anchor-classes", p(&ext.join("unseen_anchor_classes.csv")),
        "--train-codes", p(&d.join("seen.bin")), "--train-labels", p(&data.join("seen/labels.csv")),
        "--train-anchors", p(&model.join("anchor_codes.bin")), "--train-anchor-classes", p(&model.join("anchor_classes.csv")),
    ]));
    let out = String::from_utf8(o.stdout).unwrap();
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let field = |i: usize| row[i].parse::<f64>().unwrap();
    assert_eq!(row[1], "8");
    assert!(field(8) >= 0.99, "train accuracy {}", row[8]);
    assert!(field(9) >= 0.8, "test accuracy {}", row[9]);

    let csv = std::fs::read_to_string(d.join("unseen.csv")).unwrap();
    assert_eq!(csv.lines().count(), 100);
    assert!(csv.lines().all(|l| l.split(',').all(|v| v == "1" || v == "-1")));

    // Inputs are never modified.
    assert_eq!(read_all(&data), inputs_before);
}

#[test]
fn hash_rejects_wrong_feature_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(zshash(&["synth", "--out", p(&data), "--per-class", "10"]).status.code(), Some(0));
    assert_eq!(
        zshash(&["train", "--data", p(&data.join("seen")), "--out", p(&d.join("m")), "--preset", "sun"]).status.code(),
        Some(0)
    );
    std::fs::write(d.join("x.csv"), "1,2,3\n4,5,6\n").unwrap();
    let o = zshash(&["hash", "--model", p(&d.join("m")), "--features", p(&d.join("x.csv")), "--out", p(&d.join("c.bin"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_can_hold_out_classes_itself() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(zshash(&["synth", "--out", p(&data), "--per-class", "10"]).status.code(), Some(0));
    let o = zshash(&["train", "--data", p(&data), "--out", p(&d.join("m")), "--unseen-classes", "8,9", "--preset", "sun"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let side = std::fs::read_to_string(d.join("m/model.json")).unwrap();
    assert!(side.contains("\"seen_class_ids\""));
    assert_eq!(std::fs::read_to_string(d.join("m/seen_signatures.csv")).unwrap().lines().next().unwrap().split(',').count(), 8);
}
