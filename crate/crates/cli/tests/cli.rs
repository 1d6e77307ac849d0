use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed_count = 3

[dataset]
kind = "synth"
n = 400
m = 4
n_trees = 4
depth = 3

[experiment]
model = "MLP-Q"

[experiment.embedding]
n_bins = 8

[experiment.backbone]
n_layers = 2
layer_size = 32
dropout = 0.0

[experiment.train]
max_epochs = 5
patience = 2
batch_size = 64
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{extra}\n{SMALL}")).unwrap();
    path
}

fn numembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_numembed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_reports_for_every_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("run");
    let o = numembed(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in 0..3 {
        assert!(out.join(format!("seed_{seed}/report.json")).is_file());
        assert!(out.join(format!("seed_{seed}/checkpoint.json")).is_file());
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(summary["model"], "MLP-Q");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("kind,id,rmse\nsingle,0,"));
    assert!(csv.ends_with('\n') && csv.contains("ensemble_mean,,"));
    assert!(out.join("bins.json").is_file() && out.join("config.toml").is_file());
    let report = numembed(&["report", s(&out)]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("single:"));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = numembed(&[
        "train",
        "--config",
        s(&cfg),
        "--model",
        "MLP-XYZ",
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("MLP-XYZ") && err.contains("PLR") && err.contains("Q-LR"),
        "{err}"
    );
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "[experiment.train]\nbatch_size = -3\n").unwrap();
    let o = numembed(&["train", "--config", s(&path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.train.batch_size"), "{}", stderr(&o));
}

#[test]
fn rerun_reproduces_summary_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(numembed(&["train", "--config", s(&cfg), "--out", s(&a)])
        .status
        .success());
    assert!(numembed(&["train", "--config", s(&cfg), "--out", s(&b)])
        .status
        .success());
    for file in ["summary.json", "metrics.csv", "seed_1/checkpoint.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn report_on_empty_dir_finds_no_runs() {
    let tmp = TempDir::new().unwrap();
    let o = numembed(&["report", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no runs found"));
}

#[test]
fn tune_marks_the_winner() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("tuned");
    let o = numembed(&[
        "tune",
        "--config",
        s(&cfg),
        "--budget",
        "2",
        "--seed-count",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("tune.json")).unwrap()).unwrap();
    let trials = record["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 2);
    let winners: Vec<&serde_json::Value> = trials.iter().filter(|t| t["winner"] == true).collect();
    assert_eq!(winners.len(), 1);
    let best = winners[0]["val_metric"].as_f64().unwrap();
    assert!(trials
        .iter()
        .all(|t| t["val_metric"].as_f64().is_none_or(|v| best <= v)));
    let report = String::from_utf8(numembed(&["report", s(&out)]).stdout).unwrap();
    assert!(report.contains("tuning: 2 trials"));
    assert_eq!(report.lines().filter(|l| l.starts_with('*')).count(), 1);
}

#[test]
fn sweep_bins_writes_one_row_per_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("sweep");
    let o = numembed(&[
        "sweep-bins",
        "--config",
        s(&cfg),
        "--bins",
        "1,4",
        "--seed-count",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bin_count,mean_rmse,sd");
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("4,") && lines.len() == 3);
}

#[test]
fn sweep_bins_rejects_empty_list_and_unbinned_models() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bin_counts = []");
    let o = numembed(&["sweep-bins", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-empty"));
    let cfg = write_config(tmp.path(), "");
    let o = numembed(&[
        "sweep-bins",
        "--config",
        s(&cfg),
        "--model",
        "MLP-PLR",
        "--out",
        s(&tmp.path().join("y")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_csv_trains_like_the_generator() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let csv = tmp.path().join("data.csv");
    let o = numembed(&["synth", "--config", s(&cfg), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("data.schema.toml").is_file());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(
        numembed(&["train", "--config", s(&cfg), "--seed-count", "1", "--out", s(&a)])
            .status
            .success()
    );
    let o = numembed(&[
        "train",
        "--config",
        s(&cfg),
        "--seed-count",
        "1",
        "--dataset",
        s(&csv),
        "--out",
        s(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(a.join("summary.json")).unwrap(),
        std::fs::read(b.join("summary.json")).unwrap()
    );
}

#[test]
fn diverging_seed_exits_nonzero_with_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let text = SMALL.replace("max_epochs = 5", "max_epochs = 5\nlearning_rate = 1e300");
    let cfg = tmp.path().join("diverge.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("d");
    let o = numembed(&["train", "--config", s(&cfg), "--seed-count", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed 0"), "{}", stderr(&o));
    assert!(out.join("seed_0/report.json").is_file() && out.join("summary.json").is_file());
}

#[test]
fn missing_dataset_file_is_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = numembed(&["train", "--config", s(&cfg), "--dataset", "/nonexistent/x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}
