//! Metrics, multi-seed summaries and prediction-averaging ensembles.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Task;

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Fraction of rows whose argmax (first maximum on ties) equals the class index in `truth`.
pub fn accuracy(probs: &Array2<f64>, truth: &[f64]) -> Result<f64> {
    if probs.nrows() != truth.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            probs.nrows(),
            truth.len()
        )));
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(truth)
        .filter(|(row, &t)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as f64 == t
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Metric of a prediction matrix: column 0 for regression, class probabilities otherwise.
pub fn metric(task: Task, preds: &Array2<f64>, truth: &[f64]) -> Result<f64> {
    match task {
        Task::Regression => rmse(&preds.column(0).to_vec(), truth),
        _ => accuracy(preds, truth),
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, sd }
    }
}

/// Test-split predictions of several seeds of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub task: Task,
    pub seeds: Vec<u64>,
    /// One matrix per seed: probabilities for classification, original-unit values (one column)
    /// for regression.
    pub predictions: Vec<Array2<f64>>,
    pub truth: Vec<f64>,
}

impl RunSet {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() != self.predictions.len() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "run set needs one prediction matrix per seed".into(),
            ));
        }
        let dim = self.predictions[0].raw_dim();
        if dim[0] != self.truth.len() || self.predictions.iter().any(|p| p.raw_dim() != dim) {
            return Err(Error::ShapeMismatch("runs disagree on the test split shape".into()));
        }
        Ok(())
    }

    pub fn single_metrics(&self) -> Result<Vec<f64>> {
        self.validate()?;
        self.predictions
            .iter()
            .map(|p| metric(self.task, p, &self.truth))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Seeds of each group, in seed order.
    pub groups: Vec<Vec<u64>>,
    pub group_metrics: Vec<f64>,
    pub summary: MeanSd,
}

/// Splits runs, in seed order, into `n_groups` consecutive groups of equal size; averages each
/// group's predictions and scores the average.
pub fn ensemble(runs: &RunSet, n_groups: usize) -> Result<EnsembleSummary> {
    runs.validate()?;
    let n = runs.seeds.len();
    if n_groups == 0 || !n.is_multiple_of(n_groups) {
        return Err(Error::IndivisibleSeeds {
            runs: n,
            groups: n_groups,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| runs.seeds[i]);
    let size = n / n_groups;
    let mut groups = Vec::with_capacity(n_groups);
    let mut group_metrics = Vec::with_capacity(n_groups);
    for chunk in order.chunks(size) {
        let mut avg = Array2::zeros(runs.predictions[0].raw_dim());
        for &i in chunk {
            avg += &runs.predictions[i];
        }
        avg /= chunk.len() as f64;
        group_metrics.push(metric(runs.task, &avg, &runs.truth)?);
        groups.push(chunk.iter().map(|&i| runs.seeds[i]).collect());
    }
    Ok(EnsembleSummary {
        groups,
        summary: MeanSd::of(&group_metrics),
        group_metrics,
    })
}

/// CSV table with one row per seed, a mean and sd row, and per-group ensemble rows.
pub fn metrics_table(metric_name: &str, seeds: &[u64], single: &[f64], ensemble: Option<&EnsembleSummary>) -> String {
    let mut out = format!("kind,id,{metric_name}\n");
    for (s, m) in seeds.iter().zip(single) {
        writeln!(out, "single,{s},{m}").expect("writing to a String");
    }
    if !single.is_empty() {
        let ms = MeanSd::of(single);
        writeln!(out, "single_mean,,{}", ms.mean).expect("writing to a String");
        writeln!(out, "single_sd,,{}", ms.sd).expect("writing to a String");
    }
    if let Some(e) = ensemble {
        for (g, m) in e.group_metrics.iter().enumerate() {
            writeln!(out, "ensemble,{g},{m}").expect("writing to a String");
        }
        writeln!(out, "ensemble_mean,,{}", e.summary.mean).expect("writing to a String");
        writeln!(out, "ensemble_sd,,{}", e.summary.sd).expect("writing to a String");
    }
    out
}
