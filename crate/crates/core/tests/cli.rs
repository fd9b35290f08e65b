use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mibci::evaluation::{ClassificationReport, CrossValResult};
use mibci::recording::save_recording;
use mibci::synth::planted_recording;

fn mibci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mibci")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    mibci(args).status.code().unwrap()
}

fn ok(args: &[&str]) {
    let out = mibci(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Recording with `per_class` runs of each hand class, segmented with an
/// equal rest count.
fn segmented(dir: &Path, per_class: usize) -> std::path::PathBuf {
    let rec = dir.join("r.eegrec");
    save_recording(&planted_recording("r", per_class, 20.0, 3).unwrap().recording, &rec).unwrap();
    let out = dir.join("seg");
    ok(&["segment", p(&rec), "--out", p(&out)]);
    out.join("epochs.eepo")
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["inspect", "/nonexistent/x.eegrec"]), 2);

    let junk = dir.path().join("junk.eegrec");
    fs::write(&junk, b"not a recording").unwrap();
    assert_eq!(code(&["inspect", p(&junk), "--out", p(&dir.path().join("o"))]), 3);

    let epochs = segmented(dir.path(), 3);
    let out = dir.path().join("t");
    assert_eq!(code(&["train", p(&epochs), "--set", "train.no_such_field=1", "--out", p(&out)]), 2);
    assert_eq!(code(&["train", p(&epochs), "--model", "svm", "--out", p(&out)]), 2);
    assert_eq!(code(&["crossval", p(&epochs), "--folds", "1", "--out", p(&out)]), 2);
}

#[test]
fn crossval_on_twenty_rows_gives_ten_folds() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = segmented(dir.path(), 5);
    let out = dir.path().join("cv");
    ok(&["crossval", p(&epochs), "--model", "logreg", "--folds", "10", "--no-stratify", "--out", p(&out)]);
    let cv: CrossValResult = serde_json::from_str(&fs::read_to_string(out.join("cv.json")).unwrap()).unwrap();
    assert_eq!(cv.folds.len(), 10);
    assert!(cv.complete);
    assert_eq!(fs::read_to_string(out.join("cv.txt")).unwrap(), cv.render());

    // 5 rows per imagery class cannot fill 10 stratified folds
    let out = dir.path().join("cv2");
    assert_eq!(code(&["crossval", p(&epochs), "--model", "logreg", "--folds", "10", "--out", p(&out)]), 3);
}

#[test]
fn train_then_evaluate_writes_consistent_reports() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = segmented(dir.path(), 6);
    let train = dir.path().join("train");
    ok(&["train", p(&epochs), "--model", "gbt", "--set", "model.hyperparameters.n_estimators=15", "--out", p(&train)]);

    let cfg = json(&train.join("config.json"));
    assert_eq!(cfg["model"]["architecture"], "gbt");
    assert_eq!(cfg["model"]["hyperparameters"]["n_estimators"], 15);
    let manifest = json(&train.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"], "config.json");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let eval = dir.path().join("eval");
    ok(&["evaluate", p(&train.join("model.miw")), p(&epochs), "--subset", "all", "--out", p(&eval)]);
    let rep: ClassificationReport = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(fs::read_to_string(eval.join("report.txt")).unwrap(), rep.render());
    assert_eq!(rep.macro_avg.support, 24);
    let confusion = fs::read_to_string(eval.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 4);

    let sim = dir.path().join("sim");
    ok(&["simulate", p(&epochs), "--model-file", p(&train.join("model.miw")), "--out", p(&sim)]);
    let traj = fs::read_to_string(sim.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 1 + 24);
    assert_eq!(fs::read_to_string(sim.join("motor_log.jsonl")).unwrap().lines().count(), 24);
}
