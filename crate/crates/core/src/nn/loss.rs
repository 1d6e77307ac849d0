use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Task;

/// Training objective. Binary classification uses a single logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

impl Loss {
    pub fn for_task(task: Task) -> Self {
        if task.is_classification() {
            Loss::CrossEntropy
        } else {
            Loss::Mse
        }
    }
}

/// Number of model outputs for a task.
pub fn n_outputs(task: Task, n_classes: usize) -> usize {
    match task {
        Task::Regression | Task::BinClass => 1,
        Task::MultiClass => n_classes,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean loss over the batch and its gradient with respect to `outputs`.
///
/// Classification targets are class indices stored as `f64`.
pub fn loss_and_grad(loss: Loss, task: Task, outputs: &Array2<f64>, targets: &[f64]) -> Result<(f64, Array2<f64>)> {
    let n = outputs.nrows();
    if n != targets.len() || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{n} outputs vs {} targets",
            targets.len()
        )));
    }
    let inv = 1.0 / n as f64;
    let mut grad = Array2::zeros(outputs.raw_dim());
    let mut total = 0.0;
    match (loss, task) {
        (Loss::Mse, _) => {
            for (r, &y) in targets.iter().enumerate() {
                for c in 0..outputs.ncols() {
                    let d = outputs[[r, c]] - y;
                    total += d * d;
                    grad[[r, c]] = 2.0 * d * inv;
                }
            }
        }
        (Loss::CrossEntropy, Task::BinClass) => {
            if outputs.ncols() != 1 {
                return Err(Error::ShapeMismatch("binary cross-entropy expects one logit".into()));
            }
            for (r, &y) in targets.iter().enumerate() {
                let z = outputs[[r, 0]];
                total += softplus(z) - y * z;
                grad[[r, 0]] = (sigmoid(z) - y) * inv;
            }
        }
        (Loss::CrossEntropy, Task::MultiClass) => {
            for (r, &y) in targets.iter().enumerate() {
                let row = outputs.row(r);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                let class = y as usize;
                if class >= row.len() {
                    return Err(Error::InvalidArgument(format!("class {class} out of range")));
                }
                total += lse - row[class];
                for (c, v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    grad[[r, c]] = (p - f64::from(c == class)) * inv;
                }
            }
        }
        (Loss::CrossEntropy, Task::Regression) => {
            return Err(Error::InvalidArgument("cross-entropy loss on a regression task".into()))
        }
    }
    Ok((total * inv, grad))
}

/// Converts raw outputs to predictions: class probabilities (`[1 - p, p]` for binary tasks) or
/// the regression output column.
pub fn predictions(task: Task, outputs: &Array2<f64>) -> Array2<f64> {
    match task {
        Task::Regression => outputs.clone(),
        Task::BinClass => {
            let mut out = Array2::zeros((outputs.nrows(), 2));
            for (r, z) in outputs.column(0).iter().enumerate() {
                let p = sigmoid(*z);
                out[[r, 0]] = 1.0 - p;
                out[[r, 1]] = p;
            }
            out
        }
        Task::MultiClass => {
            let mut out = outputs.clone();
            for mut row in out.axis_iter_mut(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            out
        }
    }
}
