//! Commands behind the `numembed` binary: train, tune, sweep-bins, synth and report.
//!
//! Every command takes a [`RunConfig`]. Artifacts of `train` (and of the final training step of
//! `tune`) are laid out as
//!
//! ```text
//! <out>/config.toml          effective configuration, enough to rerun
//! <out>/summary.json         per-seed results, mean and sd, ensemble groups
//! <out>/metrics.csv          kind,id,<metric> table
//! <out>/bins.json            bin layouts, when the model uses bins
//! <out>/tune.json            search trials with the winner marked (tune only)
//! <out>/seed_<s>/report.json
//! <out>/seed_<s>/checkpoint.json
//! ```
//!
//! Every file is written to a temporary file in the same directory and renamed into place.

pub mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use numembed::binning::layouts_to_string;
use numembed::eval::{ensemble, metrics_table, EnsembleSummary, MeanSd, RunSet};
use numembed::experiment::{prepare, run_seed, tune, ExperimentConfig};
use numembed::train::search::Params;
use numembed::Task;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

pub use config::{load_config, parse_config, DatasetConfig, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error {0}")]
    Config(String),
    #[error("no runs found in {0}")]
    NoRunsFound(PathBuf),
    #[error("{} seed(s) failed: {}", .0.len(), .0.iter().map(|(s, e)| format!("seed {s}: {e}")).collect::<Vec<_>>().join("; "))]
    FailedSeeds(Vec<(u64, String)>),
    #[error(transparent)]
    Core(#[from] numembed::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for problems with the invocation or configuration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub task: Task,
    pub metric: String,
    pub seeds: Vec<SeedSummary>,
    /// Over successful seeds.
    pub single: Option<MeanSd>,
    pub ensemble: Option<EnsembleSummary>,
    /// Features whose bins could not be built and fell back to the scalar input.
    pub fallback_features: Vec<usize>,
}

/// Trains every configured seed and writes the artifacts. A failed seed does not stop the
/// others; it is reported as [`CliError::FailedSeeds`] after all artifacts are written.
pub fn cmd_train(config: &RunConfig) -> CliResult<Summary> {
    let dataset = config.load_dataset()?;
    train_on(config, &config.experiment, &dataset)
}

fn train_on(
    config: &RunConfig,
    experiment: &ExperimentConfig,
    dataset: &numembed::data::Dataset,
) -> CliResult<Summary> {
    let seeds = config.seeds();
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    let out = &config.out;
    let effective = RunConfig {
        experiment: experiment.clone(),
        ..config.clone()
    };
    write_atomic(&out.join("config.toml"), effective.to_toml()?.as_bytes())?;
    let prepared = prepare(dataset, experiment)?;
    let layouts = prepared.bin_layouts();
    if !layouts.is_empty() {
        write_atomic(&out.join("bins.json"), layouts_to_string(&layouts)?.as_bytes())?;
    }
    // ensemble truth comes from the dataset so the guarded test split is read once per seed
    let truth = dataset.targets(&dataset.splits()?.test);
    let mut seed_rows = Vec::new();
    let mut failures = Vec::new();
    let mut ok_seeds = Vec::new();
    let mut predictions = Vec::new();
    for &seed in &seeds {
        let run = run_seed(&prepared, experiment, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        write_atomic(&dir.join("report.json"), run.report.to_json()?.as_bytes())?;
        write_atomic(&dir.join("checkpoint.json"), run.model.to_json()?.as_bytes())?;
        info!("seed {seed}: test {} = {:?}", run.report.metric, run.report.test_metric);
        if let Some(f) = &run.report.failure {
            warn!("seed {seed} failed: {f}");
            failures.push((seed, f.clone()));
        }
        seed_rows.push(SeedSummary {
            seed,
            best_epoch: run.report.best_epoch,
            best_val_metric: run.report.best_val_metric,
            test_metric: run.report.test_metric,
            failure: run.report.failure.clone(),
        });
        if let Some(p) = run.test_predictions {
            ok_seeds.push(seed);
            predictions.push(p);
        }
    }
    let metric = prepared.task.metric_name().to_string();
    let single: Vec<f64> = seed_rows.iter().filter_map(|s| s.test_metric).collect();
    let groups = config
        .ensemble_groups()
        .filter(|&g| ok_seeds.len() >= 2 && ok_seeds.len() % g == 0);
    let ensemble_summary = match groups {
        Some(g) => {
            let runs = RunSet {
                task: prepared.task,
                seeds: ok_seeds.clone(),
                predictions,
                truth,
            };
            Some(ensemble(&runs, g)?)
        }
        None => None,
    };
    let summary = Summary {
        model: experiment.model.to_string(),
        task: prepared.task,
        metric: metric.clone(),
        seeds: seed_rows,
        single: (!single.is_empty()).then(|| MeanSd::of(&single)),
        ensemble: ensemble_summary,
        fallback_features: prepared.fallback_features.clone(),
    };
    write_atomic(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    let table = metrics_table(&metric, &ok_seeds, &single, summary.ensemble.as_ref());
    write_atomic(&out.join("metrics.csv"), table.as_bytes())?;
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::FailedSeeds(failures))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedTrial {
    pub index: usize,
    pub params: Params,
    pub val_metric: Option<f64>,
    pub error: Option<String>,
    pub winner: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub metric: String,
    pub budget: usize,
    pub seed: u64,
    pub trials: Vec<TunedTrial>,
    pub best: usize,
}

/// Random search on the validation split, then `train` with the winning configuration.
pub fn cmd_tune(config: &RunConfig) -> CliResult<(TuneRecord, Summary)> {
    if config.budget == 0 {
        return Err(CliError::Usage("tuning budget must be at least 1".into()));
    }
    let dataset = config.load_dataset()?;
    let space = config.experiment.search_space();
    let (result, best) = tune(&dataset, &config.experiment, &space, config.budget, config.tune_seed)?;
    let record = TuneRecord {
        metric: dataset.task.metric_name().to_string(),
        budget: config.budget,
        seed: config.tune_seed,
        best: result.best,
        trials: result
            .trials
            .iter()
            .enumerate()
            .map(|(i, t)| TunedTrial {
                index: i,
                params: t.params.clone(),
                val_metric: t.val_metric,
                error: t.error.clone(),
                winner: i == result.best,
            })
            .collect(),
    };
    write_atomic(
        &config.out.join("tune.json"),
        serde_json::to_string_pretty(&record)?.as_bytes(),
    )?;
    let summary = train_on(config, &best, &dataset)?;
    Ok((record, summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bin_count: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Trains the configured bin-based model at each bin count and writes `<out>/sweep.csv` with
/// columns `bin_count,mean_<metric>,sd` over the seeds.
pub fn cmd_sweep_bins(config: &RunConfig) -> CliResult<Vec<SweepRow>> {
    if config.bin_counts.is_empty() {
        return Err(CliError::Usage(
            "sweep-bins needs a non-empty list of bin counts".into(),
        ));
    }
    if config.bin_counts.contains(&0) {
        return Err(CliError::Usage("bin counts must be at least 1".into()));
    }
    if !config.experiment.model.embedding.uses_bins() {
        return Err(CliError::Usage(format!(
            "sweep-bins needs a model with bin-based embeddings (Q or T), got {}",
            config.experiment.model
        )));
    }
    let dataset = config.load_dataset()?;
    let seeds = config.seeds();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &t in &config.bin_counts {
        let mut experiment = config.experiment.clone();
        experiment.embedding.n_bins = t;
        experiment.embedding.max_leaves = t;
        let prepared = prepare(&dataset, &experiment)?;
        let mut metrics = Vec::new();
        for &seed in &seeds {
            let run = run_seed(&prepared, &experiment, seed)?;
            match (run.report.test_metric, &run.report.failure) {
                (Some(m), None) => metrics.push(m),
                (_, f) => failures.push((seed, format!("{t} bins: {}", f.clone().unwrap_or_default()))),
            }
        }
        let ms = if metrics.is_empty() {
            MeanSd {
                mean: f64::NAN,
                sd: f64::NAN,
            }
        } else {
            MeanSd::of(&metrics)
        };
        info!("{t} bins: mean {} sd {}", ms.mean, ms.sd);
        rows.push(SweepRow {
            bin_count: t,
            mean: ms.mean,
            sd: ms.sd,
        });
    }
    let mut csv = format!("bin_count,mean_{},sd\n", dataset.task.metric_name());
    for r in &rows {
        writeln!(csv, "{},{},{}", r.bin_count, r.mean, r.sd).expect("writing to a String");
    }
    write_atomic(&config.out.join("sweep.csv"), csv.as_bytes())?;
    if failures.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::FailedSeeds(failures))
    }
}

/// Writes the synthetic dataset as CSV plus a schema sidecar; returns the CSV path.
pub fn cmd_synth(config: &RunConfig) -> CliResult<PathBuf> {
    let DatasetConfig::Synth(source) = &config.dataset else {
        return Err(CliError::Usage(
            "synth needs a synthetic dataset source (--dataset synth)".into(),
        ));
    };
    let dataset = numembed::data::synth_gbdt(&source.params(), source.seed)?;
    let path = if config.out.extension().is_some_and(|e| e == "csv") {
        config.out.clone()
    } else {
        config.out.join("synth.csv")
    };
    let mut buf = Vec::new();
    dataset.write_csv(&mut buf)?;
    write_atomic(&path, &buf)?;
    let schema = numembed::data::Schema {
        target: dataset.target_name.clone(),
        task: dataset.task,
        categorical: vec![],
        ignore: vec![],
    };
    let text = toml::to_string_pretty(&schema).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&config::sidecar_path(&path), text.as_bytes())?;
    Ok(path)
}

fn seed_dirs(dir: &Path) -> Vec<(u64, PathBuf)> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return vec![];
    };
    let mut out: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let seed = name.strip_prefix("seed_")?.parse().ok()?;
            let report = e.path().join("report.json");
            report.is_file().then_some((seed, report))
        })
        .collect();
    out.sort();
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Renders a plain-text summary of an output directory.
pub fn cmd_report(dir: &Path) -> CliResult<String> {
    let reports = seed_dirs(dir);
    if reports.is_empty() {
        return Err(CliError::NoRunsFound(dir.to_path_buf()));
    }
    let mut out = String::new();
    let summary: Option<Summary> = match std::fs::read_to_string(dir.join("summary.json")) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    if let Some(s) = &summary {
        writeln!(out, "model {}  task {:?}  metric {}", s.model, s.task, s.metric).expect("writing to a String");
    }
    writeln!(
        out,
        "{:>6} {:>10} {:>12} {:>12}  status",
        "seed", "best_epoch", "val", "test"
    )
    .expect("writing to a String");
    for (seed, path) in &reports {
        let r: numembed::train::TrainReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let status = r.failure.as_deref().unwrap_or("ok");
        let epoch = r.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string());
        writeln!(
            out,
            "{seed:>6} {epoch:>10} {:>12} {:>12}  {status}",
            fmt_opt(r.best_val_metric),
            fmt_opt(r.test_metric)
        )
        .expect("writing to a String");
    }
    if let Some(s) = &summary {
        if let Some(m) = s.single {
            writeln!(out, "single: {:.4} ± {:.4}", m.mean, m.sd).expect("writing to a String");
        }
        if let Some(e) = &s.ensemble {
            writeln!(
                out,
                "ensemble ({} groups): {:.4} ± {:.4}",
                e.groups.len(),
                e.summary.mean,
                e.summary.sd
            )
            .expect("writing to a String");
        }
    }
    if let Ok(text) = std::fs::read_to_string(dir.join("tune.json")) {
        let record: TuneRecord = serde_json::from_str(&text)?;
        writeln!(
            out,
            "tuning: {} trials, validation {}",
            record.trials.len(),
            record.metric
        )
        .expect("writing to a String");
        for t in &record.trials {
            let mark = if t.winner { "*" } else { " " };
            let params: Vec<String> = t.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let val = t
                .val_metric
                .map_or_else(|| t.error.clone().unwrap_or_default(), |v| format!("{v:.4}"));
            writeln!(out, "{mark} {:>3} {val:>10}  {}", t.index, params.join(" ")).expect("writing to a String");
        }
    }
    Ok(out)
}
