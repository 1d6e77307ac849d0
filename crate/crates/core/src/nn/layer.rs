use std::f64::consts::PI;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Array2<f64>,
    #[serde(skip)]
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.raw_dim() == self.value.raw_dim() {
            self.grad.fill(0.0);
        } else {
            self.grad = Array2::zeros(self.value.raw_dim());
        }
    }
}

/// Mutable state threaded through a forward pass.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

/// Differentiable layers acting on `(batch, width)` matrices.
///
/// Each layer caches what its backward pass needs during [`Layer::forward`]; [`Layer::backward`]
/// consumes the cache, so a second backward without a new forward fails with
/// [`Error::MissingForwardState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// `y = x W + b` with `W` stored as `(in, out)`.
    Linear {
        weight: Param,
        bias: Option<Param>,
        #[serde(skip)]
        input: Option<Array2<f64>>,
    },
    Relu {
        #[serde(skip)]
        output: Option<Array2<f64>>,
    },
    LeakyRelu {
        slope: f64,
        #[serde(skip)]
        input: Option<Array2<f64>>,
    },
    /// Row-wise `softmax(x / temperature)`.
    Softmax {
        temperature: f64,
        #[serde(skip)]
        output: Option<Array2<f64>>,
    },
    /// Inverted dropout; identity outside training.
    Dropout {
        rate: f64,
        #[serde(skip)]
        mask: Option<Array2<f64>>,
    },
    /// `(batch, 1) -> (batch, 2k)`: `[sin(2 pi c x), cos(2 pi c x)]` with trainable `c` (`1 x k`).
    Periodic {
        coefficients: Param,
        #[serde(skip)]
        input: Option<Array2<f64>>,
    },
    Identity,
}

impl Layer {
    /// Linear layer with weights and bias drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn linear(fan_in: usize, fan_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
        let bias = bias.then(|| Param::new(Array2::from_shape_simple_fn((1, fan_out), || dist.sample(rng))));
        Layer::Linear {
            weight: Param::new(weight),
            bias,
            input: None,
        }
    }

    pub fn linear_from(weight: Array2<f64>, bias: Option<Array2<f64>>) -> Self {
        Layer::Linear {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            input: None,
        }
    }

    pub fn relu() -> Self {
        Layer::Relu { output: None }
    }

    pub fn leaky_relu() -> Self {
        Layer::LeakyRelu {
            slope: LEAKY_RELU_SLOPE,
            input: None,
        }
    }

    pub fn softmax(temperature: f64) -> Self {
        Layer::Softmax {
            temperature,
            output: None,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        Layer::Dropout { rate, mask: None }
    }

    pub fn periodic(k: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let c = Array2::from_shape_simple_fn((1, k), || normal.sample(rng));
        Ok(Layer::Periodic {
            coefficients: Param::new(c),
            input: None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Relu { .. } => "relu",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Softmax { .. } => "softmax",
            Layer::Dropout { .. } => "dropout",
            Layer::Periodic { .. } => "periodic",
            Layer::Identity => "identity",
        }
    }

    pub fn output_width(&self, input_width: usize) -> usize {
        match self {
            Layer::Linear { weight, .. } => weight.value.ncols(),
            Layer::Periodic { coefficients, .. } => 2 * coefficients.value.ncols(),
            _ => input_width,
        }
    }

    /// Expected input width, when the layer fixes one.
    pub fn input_width(&self) -> Option<usize> {
        match self {
            Layer::Linear { weight, .. } => Some(weight.value.nrows()),
            Layer::Periodic { .. } => Some(1),
            _ => None,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Linear { weight, bias, .. } => {
                let mut v = vec![weight];
                v.extend(bias.as_ref());
                v
            }
            Layer::Periodic { coefficients, .. } => vec![coefficients],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Linear { weight, bias, .. } => {
                let mut v = vec![weight];
                v.extend(bias.as_mut());
                v
            }
            Layer::Periodic { coefficients, .. } => vec![coefficients],
            _ => Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Linear { input, .. } | Layer::LeakyRelu { input, .. } | Layer::Periodic { input, .. } => {
                *input = None
            }
            Layer::Relu { output } | Layer::Softmax { output, .. } => *output = None,
            Layer::Dropout { mask, .. } => *mask = None,
            Layer::Identity => {}
        }
    }

    /// Inference-mode evaluation without caching.
    pub fn apply(&self, x: Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Linear { weight, bias, .. } => linear_forward(&x, weight, bias.as_ref()),
            Layer::Relu { .. } => x.mapv_into(|v| v.max(0.0)),
            Layer::LeakyRelu { slope, .. } => {
                let s = *slope;
                x.mapv_into(|v| if v > 0.0 { v } else { s * v })
            }
            Layer::Softmax { temperature, .. } => softmax_rows(x, *temperature),
            Layer::Dropout { .. } | Layer::Identity => x,
            Layer::Periodic { coefficients, .. } => periodic_forward(&x, &coefficients.value),
        }
    }

    pub fn forward(&mut self, x: Array2<f64>, ctx: &mut ForwardCtx<'_>) -> Array2<f64> {
        match self {
            Layer::Linear { weight, bias, input } => {
                let y = linear_forward(&x, weight, bias.as_ref());
                *input = Some(x);
                y
            }
            Layer::Relu { output } => {
                let y = x.mapv_into(|v| v.max(0.0));
                *output = Some(y.clone());
                y
            }
            Layer::LeakyRelu { slope, input } => {
                let s = *slope;
                let y = x.mapv(|v| if v > 0.0 { v } else { s * v });
                *input = Some(x);
                y
            }
            Layer::Softmax { temperature, output } => {
                let y = softmax_rows(x, *temperature);
                *output = Some(y.clone());
                y
            }
            Layer::Dropout { rate, mask } => {
                if !ctx.train || *rate == 0.0 {
                    *mask = Some(Array2::ones(x.raw_dim()));
                    return x;
                }
                let keep = 1.0 - *rate;
                let scale = 1.0 / keep;
                let m =
                    Array2::from_shape_simple_fn(x.raw_dim(), || if ctx.rng.gen::<f64>() < keep { scale } else { 0.0 });
                let y = &x * &m;
                *mask = Some(m);
                y
            }
            Layer::Periodic { coefficients, input } => {
                let y = periodic_forward(&x, &coefficients.value);
                *input = Some(x);
                y
            }
            Layer::Identity => x,
        }
    }

    /// Accumulates parameter gradients for `grad_out = dL/dy` and returns `dL/dx` when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, grad_out: Array2<f64>, need_input_grad: bool) -> Result<Option<Array2<f64>>> {
        let missing = || Error::MissingForwardState;
        match self {
            Layer::Linear { weight, bias, input } => {
                let x = input.take().ok_or_else(missing)?;
                weight.zero_grad_if_unsized();
                general_mat_mul(1.0, &x.t(), &grad_out, 1.0, &mut weight.grad);
                if let Some(b) = bias {
                    b.zero_grad_if_unsized();
                    b.grad += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                Ok(need_input_grad.then(|| grad_out.dot(&weight.value.t())))
            }
            Layer::Relu { output } => {
                let y = output.take().ok_or_else(missing)?;
                let mut g = grad_out;
                Zip::from(&mut g).and(&y).for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
                Ok(Some(g))
            }
            Layer::LeakyRelu { slope, input } => {
                let x = input.take().ok_or_else(missing)?;
                let s = *slope;
                let mut g = grad_out;
                Zip::from(&mut g).and(&x).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g *= s;
                    }
                });
                Ok(Some(g))
            }
            Layer::Softmax { temperature, output } => {
                let y = output.take().ok_or_else(missing)?;
                let t = *temperature;
                let mut g = grad_out;
                for (mut g_row, y_row) in g.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    let dot: f64 = g_row.iter().zip(y_row.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut g_row)
                        .and(&y_row)
                        .for_each(|g, &y| *g = y * (*g - dot) / t);
                }
                Ok(Some(g))
            }
            Layer::Dropout { mask, .. } => {
                let m = mask.take().ok_or_else(missing)?;
                Ok(Some(grad_out * &m))
            }
            Layer::Periodic { coefficients, input } => {
                let x = input.take().ok_or_else(missing)?;
                coefficients.zero_grad_if_unsized();
                let c = &coefficients.value;
                let k = c.ncols();
                let mut dx = Array2::zeros((x.nrows(), 1));
                for r in 0..x.nrows() {
                    let xr = x[[r, 0]];
                    let mut acc = 0.0;
                    for j in 0..k {
                        let cj = c[[0, j]];
                        let (s, co) = (2.0 * PI * cj * xr).sin_cos();
                        let dv = co * grad_out[[r, j]] - s * grad_out[[r, k + j]];
                        coefficients.grad[[0, j]] += dv * 2.0 * PI * xr;
                        acc += dv * 2.0 * PI * cj;
                    }
                    dx[[r, 0]] = acc;
                }
                Ok(need_input_grad.then_some(dx))
            }
            Layer::Identity => Ok(Some(grad_out)),
        }
    }
}

impl Param {
    fn zero_grad_if_unsized(&mut self) {
        if self.grad.raw_dim() != self.value.raw_dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        }
    }
}

fn linear_forward(x: &Array2<f64>, weight: &Param, bias: Option<&Param>) -> Array2<f64> {
    let mut y = x.dot(&weight.value);
    if let Some(b) = bias {
        y += &b.value;
    }
    y
}

fn softmax_rows(mut x: Array2<f64>, temperature: f64) -> Array2<f64> {
    for mut row in x.axis_iter_mut(Axis(0)) {
        row.mapv_inplace(|v| v / temperature);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    x
}

fn periodic_forward(x: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let k = c.ncols();
    let mut y = Array2::zeros((x.nrows(), 2 * k));
    for r in 0..x.nrows() {
        let xr = x[[r, 0]];
        for j in 0..k {
            let (s, co) = (2.0 * PI * c[[0, j]] * xr).sin_cos();
            y[[r, j]] = s;
            y[[r, k + j]] = co;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;

    fn ctx(rng: &mut ChaCha8Rng, train: bool) -> ForwardCtx<'_> {
        ForwardCtx { train, rng }
    }

    #[test]
    fn linear_mse_gradient_is_closed_form() {
        // single output linear layer without bias: grad of mean squared error is 2 X^T (Xw - y) / n
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let w = array![[0.3], [-0.2]];
        let y = array![[1.0], [0.0], [2.0]];
        let mut layer = Layer::linear_from(w.clone(), None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = layer.forward(x.clone(), &mut ctx(&mut rng, true));
        let n = x.nrows() as f64;
        let g = (&pred - &y) * (2.0 / n);
        layer.backward(g, false).unwrap();
        let expected = x.t().dot(&(x.dot(&w) - &y)) * (2.0 / n);
        let Layer::Linear { weight, .. } = &layer else {
            unreachable!()
        };
        for (a, b) in weight.grad.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Layer::linear(3, 2, true, &mut rng);
        assert!(matches!(
            layer.backward(Array2::zeros((1, 2)), true),
            Err(Error::MissingForwardState)
        ));
        let mut relu = Layer::relu();
        assert!(relu.backward(Array2::zeros((1, 2)), true).is_err());
    }

    #[test]
    fn forward_backward_leaves_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Layer::linear(4, 3, true, &mut rng);
        let before = layer.clone();
        let x = Array2::from_elem((2, 4), 0.5);
        let y = layer.forward(x, &mut ctx(&mut rng, true));
        layer.backward(Array2::ones(y.raw_dim()), true).unwrap();
        for (a, b) in layer.params().iter().zip(before.params()) {
            assert_eq!(a.value, b.value);
            assert_eq!(a.grad.raw_dim(), a.value.raw_dim());
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        let mut d0 = Layer::dropout(0.0);
        assert_eq!(d0.forward(x.clone(), &mut ctx(&mut rng, true)), x);
        let mut d = Layer::dropout(0.5);
        assert_eq!(d.forward(x.clone(), &mut ctx(&mut rng, false)), x);
        let y = d.forward(x.clone(), &mut ctx(&mut rng, true));
        for (a, b) in y.iter().zip(x.iter()) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let y = softmax_rows(array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]], 0.7);
        for row in y.axis_iter(Axis(0)) {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        let flat = softmax_rows(array![[1.0, -4.0, 9.0]], 1e12);
        for v in flat.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn output_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Layer::linear(3, 7, true, &mut rng).output_width(3), 7);
        assert_eq!(Layer::periodic(5, 1.0, &mut rng).unwrap().output_width(1), 10);
        assert_eq!(Layer::relu().output_width(9), 9);
    }

    #[test]
    fn apply_matches_eval_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layers = vec![
            Layer::linear(3, 4, true, &mut rng),
            Layer::leaky_relu(),
            Layer::softmax(0.5),
            Layer::dropout(0.3),
        ];
        let x = Array2::from_shape_fn((2, 3), |(i, j)| i as f64 - j as f64 * 0.3);
        let mut a = x.clone();
        let mut b = x;
        for mut l in layers {
            a = l.apply(a);
            b = l.forward(b, &mut ctx(&mut rng, false));
        }
        assert_eq!(a, b);
    }
}
