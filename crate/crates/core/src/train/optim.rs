use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::nn::layer::Param;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

/// AdamW with decoupled weight decay applied to every parameter:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    /// Number of completed steps.
    pub t: u64,
    state: Vec<Moments>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            t: 0,
            state: Vec::new(),
        }
    }

    /// Updates `params` in place from their accumulated gradients. The parameter list must have
    /// the same shapes, in the same order, on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|p| Moments {
                    m: Array2::zeros(p.value.raw_dim()),
                    v: Array2::zeros(p.value.raw_dim()),
                })
                .collect();
        }
        if self.state.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.state.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let (lr, wd) = (self.lr, self.weight_decay);
        for (p, s) in params.iter_mut().zip(&mut self.state) {
            if p.grad.raw_dim() != p.value.raw_dim() || s.m.raw_dim() != p.value.raw_dim() {
                return Err(Error::ShapeMismatch(
                    "gradient buffer does not match its parameter".into(),
                ));
            }
            let Param { value, grad } = &mut **p;
            Zip::from(value)
                .and(&*grad)
                .and(&mut s.m)
                .and(&mut s.v)
                .for_each(|p, &g, m, v| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + EPS) + wd * *p);
                });
        }
        Ok(())
    }
}
