use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedMatrix;
use crate::error::{Error, Result};
use crate::eval::{accuracy, rmse};
use crate::nn::loss::{loss_and_grad, predictions, Loss};
use crate::nn::model::Model;
use crate::train::optim::AdamW;
use crate::train::preprocess::TargetScaler;
use crate::Task;

/// Random stream used for epoch shuffling.
const SHUFFLE_STREAM: u64 = 1;
/// Random stream used for dropout masks.
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Defaults to the task's natural loss.
    pub loss: Option<Loss>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            patience: 16,
            max_epochs: 1000,
            seed: 0,
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub wall_time_secs: f64,
    pub test_metric: Option<f64>,
    pub n_params: usize,
    /// Set when the run diverged.
    pub failure: Option<String>,
}

impl TrainReport {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Training inputs. Regression targets in `y_train` are already standardized when
/// `target_scaler` is set; `y_val` is in original units.
pub struct TrainData<'a> {
    pub task: Task,
    pub train: &'a EncodedMatrix,
    pub y_train: &'a [f64],
    pub val: &'a EncodedMatrix,
    pub y_val: &'a [f64],
    pub target_scaler: Option<TargetScaler>,
}

/// Task metric of raw model outputs: RMSE in original units or accuracy.
pub fn task_metric(task: Task, outputs: &Array2<f64>, y: &[f64], scaler: Option<TargetScaler>) -> Result<f64> {
    let preds = predictions(task, outputs);
    match task {
        Task::Regression => {
            let p: Vec<f64> = preds
                .column(0)
                .iter()
                .map(|&z| scaler.map_or(z, |s| s.inverse(z)))
                .collect();
            rmse(&p, y)
        }
        _ => accuracy(&preds, y),
    }
}

fn improves(task: Task, candidate: f64, best: Option<f64>) -> bool {
    if !candidate.is_finite() {
        return false;
    }
    match best {
        None => true,
        Some(b) if task.higher_is_better() => candidate > b,
        Some(b) => candidate < b,
    }
}

/// Mini-batch AdamW training with early stopping on the validation task metric.
///
/// Each epoch is one pass over a seeded shuffle of the training rows; the final partial batch is
/// kept. Training stops after `patience + 1` consecutive epochs without strict improvement or at
/// `max_epochs`, and the best epoch's parameters are restored. Divergence is recorded in
/// [`TrainReport::failure`] rather than returned as an error.
pub fn train(model: &mut Model, data: &TrainData<'_>, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let n = data.train.n_rows();
    if n == 0 || n != data.y_train.len() || data.val.n_rows() != data.y_val.len() {
        return Err(Error::ShapeMismatch(
            "training or validation targets do not match their inputs".into(),
        ));
    }
    let loss = config.loss.unwrap_or_else(|| Loss::for_task(data.task));
    let started = Instant::now();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);

    let mut report = TrainReport {
        config: config.clone(),
        metric: data.task.metric_name().into(),
        epochs: Vec::new(),
        best_epoch: None,
        best_val_metric: None,
        wall_time_secs: 0.0,
        test_metric: None,
        n_params: model.param_count(),
        failure: None,
    };
    let mut best_params: Option<Vec<Array2<f64>>> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let outcome = (|| -> Result<(f64, f64)> {
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let x = data.train.select_rows(batch);
                let y: Vec<f64> = batch.iter().map(|&i| data.y_train[i]).collect();
                let out = model.forward(&x, true, &mut dropout_rng)?;
                let (l, grad) = loss_and_grad(loss, data.task, &out, &y)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteActivation { stage: "loss".into() });
                }
                total += l * batch.len() as f64;
                model.zero_grad();
                model.backward(grad)?;
                opt.step(&mut model.params_mut())?;
            }
            let val_out = model.predict(data.val)?;
            let metric = task_metric(data.task, &val_out, data.y_val, data.target_scaler)?;
            Ok((total / n as f64, metric))
        })();
        let (train_loss, val_metric) = match outcome {
            Ok(v) => v,
            Err(e @ Error::NonFiniteActivation { .. }) => {
                report.failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
        });
        if improves(data.task, val_metric, report.best_val_metric) {
            report.best_val_metric = Some(val_metric);
            report.best_epoch = Some(epoch);
            best_params = Some(model.params().iter().map(|p| p.value.clone()).collect());
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        for (p, v) in model.params_mut().into_iter().zip(best) {
            p.value = v;
        }
    }
    model.zero_grad();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::embedding::{EmbeddingKind, EmbeddingSpec};
    use crate::nn::model::{build_model, MlpConfig};

    fn toy(n: usize) -> (EncodedMatrix, Vec<f64>) {
        let x = Array2::from_shape_fn((n, 2), |(r, c)| ((r * 7 + c * 3) % 11) as f64 / 5.0 - 1.0);
        let y = x.rows().into_iter().map(|r| f64::from(r[0] + r[1] > 0.0)).collect();
        let blocks = (0..2)
            .map(|c| x.column(c).to_owned().insert_axis(ndarray::Axis(1)))
            .collect();
        (
            EncodedMatrix {
                blocks,
                categorical: Array2::zeros((n, 0)),
                names: vec![],
            },
            y,
        )
    }

    fn model(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = EmbeddingSpec::new("L".parse::<EmbeddingKind>().unwrap());
        let cfg = MlpConfig {
            n_layers: 1,
            layer_size: 16,
            dropout: 0.0,
        };
        build_model(vec![spec; 2], cfg, 0, 1, &mut rng).unwrap()
    }

    #[test]
    fn separable_data_is_learned() {
        let (x, y) = toy(200);
        let data = TrainData {
            task: Task::BinClass,
            train: &x,
            y_train: &y,
            val: &x,
            y_val: &y,
            target_scaler: None,
        };
        let mut m = model(0);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            patience: 30,
            ..Default::default()
        };
        let report = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(report.best_val_metric, Some(1.0));
        let out = m.predict(&x).unwrap();
        assert_eq!(task_metric(Task::BinClass, &out, &y, None).unwrap(), 1.0);
    }

    #[test]
    fn restores_the_best_epoch_and_respects_patience() {
        let (x, y) = toy(100);
        let data = TrainData {
            task: Task::Regression,
            train: &x,
            y_train: &y,
            val: &x,
            y_val: &y,
            target_scaler: None,
        };
        let mut m = model(1);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 7,
            patience: 0,
            max_epochs: 200,
            ..Default::default()
        };
        let report = train(&mut m, &data, &cfg).unwrap();
        let best = report.best_epoch.unwrap();
        // with zero patience the first non-improving epoch ends the run
        assert_eq!(report.epochs.len(), best + 2);
        let out = m.predict(&x).unwrap();
        assert_eq!(
            task_metric(Task::Regression, &out, &y, None).unwrap(),
            report.best_val_metric.unwrap()
        );
        let min = report.epochs.iter().map(|e| e.val_metric).fold(f64::INFINITY, f64::min);
        assert_eq!(min, report.best_val_metric.unwrap());
    }

    #[test]
    fn runs_are_deterministic() {
        let (x, y) = toy(64);
        let data = TrainData {
            task: Task::Regression,
            train: &x,
            y_train: &y,
            val: &x,
            y_val: &y,
            target_scaler: None,
        };
        let cfg = TrainConfig {
            max_epochs: 5,
            batch_size: 10,
            ..Default::default()
        };
        let (mut a, mut b) = (model(3), model(3));
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra.epochs, rb.epochs);
        assert_eq!(a, b);
    }
}
