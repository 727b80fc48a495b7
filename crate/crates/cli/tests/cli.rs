use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use failsafe_core::matrix::Matrix;
use failsafe_core::scores::{load_scores, save_scores, ScoreSet};

fn failsafe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failsafe"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Three classes, mostly right, with a few confident mistakes.
fn write_scores(path: &Path, factor: f64) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let k = i % 3;
        let mut row = [0.0; 3];
        row[k] = factor * (0.5 + (i % 7) as f64 * 0.3);
        rows.push(row);
        labels.push(if i % 5 == 0 { (k + 1) % 3 } else { k });
    }
    let set = ScoreSet::new(Matrix::from_rows(&rows).unwrap(), labels, None).unwrap();
    save_scores(&set, path).unwrap();
}

const SMALL_RECIPE: &str = "\
methods = [\"baseline\", \"fmfp\"]
seeds = [0, 1]
n_samples = 400
hidden = [8]
epochs = 6
milestones = [3, 5]
swa_start = 4
";

#[test]
fn eval_prints_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.csv");
    write_scores(&scores, 1.0);
    let out = failsafe(&["eval", "--scores", scores.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    for key in [
        "aurc",
        "e_aurc",
        "auroc",
        "fpr_at_95tpr",
        "ece",
        "nll",
        "brier",
        "accuracy",
    ] {
        assert!(report[key].is_f64(), "missing {key}");
    }
    assert!((report["accuracy"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    let file = dir.path().join("report.json");
    let out = failsafe(&[
        "eval",
        "--scores",
        scores.to_str().unwrap(),
        "--bins",
        "10",
        "--out",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    assert_eq!(written["auroc"], report["auroc"]);
}

#[test]
fn data_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&failsafe(&["eval", "--scores", missing.to_str().unwrap()])), 2);

    let malformed = dir.path().join("bad.csv");
    fs::write(&malformed, "id,label,logit_0,logit_1\na,0,1.0,x\n").unwrap();
    let out = failsafe(&["eval", "--scores", malformed.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    // No errors at all: failure-prediction metrics are undefined.
    let perfect = dir.path().join("perfect.csv");
    fs::write(&perfect, "id,label,logit_0,logit_1\na,0,2.0,0.0\nb,1,0.0,1.0\n").unwrap();
    assert_eq!(code(&failsafe(&["eval", "--scores", perfect.to_str().unwrap()])), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&failsafe(&[])), 1);
    assert_eq!(code(&failsafe(&["eval"])), 1);
    assert_eq!(code(&failsafe(&["eval", "--scores", "s.csv", "--bogus"])), 1);
    assert_eq!(
        code(&failsafe(&["calibrate", "--scores", "s.csv", "--fit-on", "train"])),
        1
    );
    assert_eq!(code(&failsafe(&["eval", "--scores", "s.csv", "--bins", "0"])), 1);
    assert_eq!(code(&failsafe(&["--help"])), 0);
}

#[test]
fn calibrate_fits_and_applies_a_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.jsonl");
    write_scores(&scores, 4.0);
    let scaled = dir.path().join("scaled.csv");
    let out = failsafe(&[
        "calibrate",
        "--scores",
        scores.to_str().unwrap(),
        "--fit-on",
        "val",
        "--objective",
        "nll",
        "--apply",
        scaled.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = json(&out);
    let t = model["t"].as_f64().unwrap();
    assert!(t > 1.0, "overconfident logits should be softened, t = {t}");
    assert_eq!(model["fitted_on"], "validation");
    assert!(model["nll_after"].as_f64().unwrap() <= model["nll_before"].as_f64().unwrap());

    let before = load_scores(&scores).unwrap();
    let after = load_scores(&scaled).unwrap();
    for (a, b) in before.logits().as_slice().iter().zip(after.logits().as_slice()) {
        assert!((a / t - b).abs() < 1e-12);
    }

    let out = failsafe(&[
        "calibrate",
        "--scores",
        scores.to_str().unwrap(),
        "--fit-on",
        "test",
        "--objective",
        "auroc",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["objective"], "auroc");
}

#[test]
fn train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("recipe.toml");
    fs::write(&recipe, SMALL_RECIPE).unwrap();
    let runs = dir.path().join("runs");
    let out = failsafe(&[
        "train",
        "--recipe",
        recipe.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("| fmfp | 2 |"));
    for name in ["aggregate.json", "seed_0.json", "seed_1.json", "recipe.toml"] {
        assert!(runs.join(name).is_file(), "{name}");
    }

    let emit = dir.path().join("artifacts");
    let out = failsafe(&[
        "report",
        "--runs",
        runs.to_str().unwrap(),
        "--emit",
        emit.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for rel in [
        "summary.json",
        "summary.md",
        "risk_coverage/fmfp.csv",
        "histograms/baseline.csv",
        "traces/fmfp_seed1.csv",
    ] {
        assert!(emit.join(rel).is_file(), "{rel}");
    }
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2 * (2 + 2) + 2);
}

#[test]
fn degraded_runs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("recipe.toml");
    fs::write(&recipe, format!("{SMALL_RECIPE}lr = 1e200\n")).unwrap();
    let runs = dir.path().join("runs");
    let out = failsafe(&[
        "train",
        "--recipe",
        recipe.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let emit = dir.path().join("artifacts");
    let out = failsafe(&[
        "report",
        "--runs",
        runs.to_str().unwrap(),
        "--emit",
        emit.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_recipes_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("recipe.toml");
    for text in ["unknown_key = 1\n", "methods = [\"crl\"]\n", "swa_start = 99\n"] {
        fs::write(&recipe, text).unwrap();
        let out = failsafe(&[
            "train",
            "--recipe",
            recipe.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 1, "{text}");
    }
    let missing = dir.path().join("none.toml");
    let out = failsafe(&[
        "train",
        "--recipe",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}
