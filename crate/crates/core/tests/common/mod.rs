//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use ndarray::Array2;
use numembed::binning::{BinLayout, TreeBinning};
use numembed::encoding::EncodedMatrix;
use numembed::nn::layer::{ForwardCtx, Layer};
use numembed::nn::model::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Piecewise linear encoding written case by case.
pub fn ple_oracle(x: f64, b: &[f64]) -> Vec<f64> {
    let t_max = b.len() - 1;
    (1..=t_max)
        .map(|t| {
            let (lo, hi) = (b[t - 1], b[t]);
            if t > 1 && x < lo {
                0.0
            } else if t < t_max && x >= hi {
                1.0
            } else {
                (x - lo) / (hi - lo)
            }
        })
        .collect()
}

/// Thresholded encoding: passed bins and the containing bin are 1.
pub fn binary_oracle(x: f64, b: &[f64]) -> Vec<f64> {
    let t_max = b.len() - 1;
    if x < b[0] {
        return vec![0.0; t_max];
    }
    if x >= b[t_max] {
        return vec![1.0; t_max];
    }
    (1..=t_max).map(|t| if x >= b[t - 1] { 1.0 } else { 0.0 }).collect()
}

/// Matrix-form linear layer on a row vector: `bias + e V`.
pub fn linear_oracle(e: &[f64], bias: &[f64], v: &Array2<f64>) -> Vec<f64> {
    let mut out = bias.to_vec();
    for (c, o) in out.iter_mut().enumerate() {
        for (t, et) in e.iter().enumerate() {
            *o += et * v[[t, c]];
        }
    }
    out
}

const H: f64 = 1e-6;

pub fn random_bins(rng: &mut ChaCha8Rng, max_bins: usize) -> BinLayout {
    let t = rng.gen_range(1..=max_bins);
    let mut b = vec![rng.gen_range(-5.0..5.0)];
    for _ in 0..t {
        let prev = *b.last().unwrap();
        b.push(prev + rng.gen_range(0.01..3.0));
    }
    BinLayout::new(0, b).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `n * variance` computed in two passes.
fn scatter(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum()
}

fn entropy(labels: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn split_gain(ys: &[f64], at: usize, classification: bool) -> f64 {
    let (l, r) = ys.split_at(at);
    let n = ys.len() as f64;
    if classification {
        let lab = |s: &[f64]| s.iter().map(|&y| y as usize).collect::<Vec<_>>();
        entropy(&lab(ys)) - (l.len() as f64 / n) * entropy(&lab(l)) - (r.len() as f64 / n) * entropy(&lab(r))
    } else {
        (scatter(ys) - scatter(l) - scatter(r)) / n
    }
}

/// Greedy tree binning by brute force: at every step every leaf and every midpoint between
/// distinct neighbours is scored from scratch, scanning leaves left to right and thresholds in
/// ascending order; a candidate replaces the incumbent only if it is better by more than the
/// relative tolerance.
pub fn tree_bins_oracle(values: &[f64], targets: &[f64], classification: bool, p: &TreeBinning) -> Vec<f64> {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(targets.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    // leaves as half-open index ranges over the sorted sample
    let mut leaves = vec![(0usize, xs.len())];
    while leaves.len() < p.max_leaves {
        let mut best: Option<(usize, usize, f64)> = None;
        for (li, &(s, e)) in leaves.iter().enumerate() {
            for pos in s + 1..e {
                if xs[pos - 1] == xs[pos] {
                    continue;
                }
                if pos - s < p.min_samples_leaf || e - pos < p.min_samples_leaf {
                    continue;
                }
                let g = split_gain(&ys[s..e], pos - s, classification);
                if g.is_nan() || g <= 0.0 || g < p.min_info_gain {
                    continue;
                }
                let beats = match best {
                    None => true,
                    Some((_, _, bg)) => g - bg > 1e-9 * g.abs().max(bg.abs()),
                };
                if beats {
                    best = Some((li, pos, g));
                }
            }
        }
        let Some((li, pos, _)) = best else { break };
        let (s, e) = leaves[li];
        leaves.splice(li..=li, [(s, pos), (pos, e)]);
    }
    let mut b = vec![xs[0]];
    for &(s, _) in &leaves[1..] {
        b.push((xs[s - 1] + xs[s]) / 2.0);
    }
    b.push(xs[xs.len() - 1]);
    b
}

/// Sum of `outputs * weights`: a scalar loss whose gradient with respect to the outputs is
/// `weights`.
pub fn weighted_sum(out: &Array2<f64>, weights: &Array2<f64>) -> f64 {
    (out * weights).sum()
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Compares the model's backward pass with central differences on up to `n_checks` randomly
/// chosen parameters. Returns the largest relative error.
pub fn model_fd_max_error(model: &mut Model, input: &EncodedMatrix, n_checks: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.predict(input).unwrap();
    let weights = Array2::from_shape_simple_fn(out.raw_dim(), || rng.gen_range(-1.0..1.0));
    model.zero_grad();
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    model.forward(input, true, &mut fwd_rng).unwrap();
    model.backward(weights.clone()).unwrap();
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.iter().copied().collect())
        .collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if total <= n_checks {
        (0..total).collect()
    } else {
        (0..n_checks).map(|_| rng.gen_range(0..total)).collect()
    };
    let h = H;
    let mut worst = 0.0f64;
    for flat in picks {
        let (mut pi, mut off) = (0, flat);
        while off >= sizes[pi] {
            off -= sizes[pi];
            pi += 1;
        }
        let eval = |m: &mut Model, delta: f64| {
            let orig = {
                let mut ps = m.params_mut();
                let v = ps[pi].value.as_slice_mut().unwrap();
                let o = v[off];
                v[off] = o + delta;
                o
            };
            let l = weighted_sum(&m.predict(input).unwrap(), &weights);
            m.params_mut()[pi].value.as_slice_mut().unwrap()[off] = orig;
            l
        };
        let numeric = (eval(model, h) - eval(model, -h)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[pi][off], numeric));
    }
    worst
}

/// Training-mode forward with a freshly seeded generator so dropout masks repeat exactly.
pub fn run_layer(layer: &mut Layer, x: &Array2<f64>) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    layer.forward(
        x.clone(),
        &mut ForwardCtx {
            train: true,
            rng: &mut rng,
        },
    )
}

/// Worst relative error over every input entry and every parameter entry of one layer.
pub fn layer_fd_error(mut layer: Layer, x: Array2<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = run_layer(&mut layer, &x);
    let w = Array2::from_shape_simple_fn(out.raw_dim(), || rng.gen_range(-1.0..1.0));
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let grad_x = layer.backward(w.clone(), true).unwrap().unwrap();
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += H;
        let mut minus = x.clone();
        minus[[r, c]] -= H;
        let num = (weighted_sum(&run_layer(&mut layer, &plus), &w) - weighted_sum(&run_layer(&mut layer, &minus), &w))
            / (2.0 * H);
        worst = worst.max(rel_err(grad_x[[r, c]], num));
    }
    let analytic: Vec<Vec<f64>> = layer
        .params()
        .iter()
        .map(|p| p.grad.iter().copied().collect())
        .collect();
    for (pi, grads) in analytic.iter().enumerate() {
        for (off, g) in grads.iter().enumerate() {
            let mut shifted = |delta: f64| {
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[off] += delta;
                let l = weighted_sum(&run_layer(&mut layer, &x), &w);
                layer.params_mut()[pi].value.as_slice_mut().unwrap()[off] -= delta;
                l
            };
            let num = (shifted(H) - shifted(-H)) / (2.0 * H);
            worst = worst.max(rel_err(*g, num));
        }
    }
    worst
}

pub fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // keep inputs away from the ReLU kink so central differences stay on one side
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}
