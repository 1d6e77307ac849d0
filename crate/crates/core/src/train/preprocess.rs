use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::binning::{quantile_rational, sorted_finite};
use crate::error::{Error, Result};

/// Maximum number of reference quantiles per feature.
pub const MAX_LANDMARKS: usize = 1000;
/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before the inverse normal CDF.
const PROB_CLIP: f64 = 1e-7;
/// Transformed values are clamped to this many standard deviations.
pub const OUTPUT_CLAMP: f64 = 8.0;

/// Rank-based map to a standard normal: empirical CDF through reference quantiles, then the
/// inverse normal CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Levels in `[0, 1]`, evenly spaced, with `0.5` among them.
    pub levels: Vec<f64>,
    /// Sample quantiles at `levels`; non-decreasing.
    pub quantiles: Vec<f64>,
}

impl QuantileTransform {
    /// `n_landmarks` is rounded up to an odd count so that the median is a landmark.
    pub fn fit(feature: usize, values: &[f64], n_landmarks: usize) -> Result<Self> {
        let sorted = sorted_finite(values, feature)?;
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::degenerate(feature, "constant feature"));
        }
        let l = n_landmarks.max(3) | 1;
        let den = l - 1;
        let levels = (0..l).map(|i| i as f64 / den as f64).collect();
        let quantiles = (0..l).map(|i| quantile_rational(&sorted, i, den)).collect();
        Ok(Self { levels, quantiles })
    }

    /// Empirical CDF value: the mean of ascending and descending interpolation, which spreads
    /// repeated quantiles symmetrically.
    pub fn cdf(&self, x: f64) -> f64 {
        let up = interp(x, &self.quantiles, &self.levels);
        let neg_q: Vec<f64> = self.quantiles.iter().rev().map(|q| -q).collect();
        let neg_l: Vec<f64> = self.levels.iter().rev().map(|l| -l).collect();
        let down = -interp(-x, &neg_q, &neg_l);
        0.5 * (up + down)
    }

    pub fn apply(&self, x: f64) -> f64 {
        let p = self.cdf(x).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let z = standard_normal().inverse_cdf(p);
        z.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP)
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Piecewise linear interpolation with constant extrapolation. For repeated `xs` the rightmost
/// matching point wins.
fn interp(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if x < xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    // first index with xs[j] > x; 1 <= j <= n - 1
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

/// `(x - mean) / std` with the population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(feature: usize, values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate(feature, "empty or non-finite sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 0.0) {
            return Err(Error::degenerate(feature, "zero variance"));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessingKind {
    None,
    Standard,
    #[default]
    Quantile,
}

impl std::str::FromStr for PreprocessingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "standard" => Ok(Self::Standard),
            "quantile" => Ok(Self::Quantile),
            _ => Err(Error::InvalidArgument(format!("unknown preprocessing `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureTransform {
    Identity,
    Standard(Standardizer),
    Quantile(QuantileTransform),
}

impl FeatureTransform {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            FeatureTransform::Identity => x,
            FeatureTransform::Standard(s) => s.apply(x),
            FeatureTransform::Quantile(q) => q.apply(x),
        }
    }
}

/// Per-feature numerical preprocessing fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub kind: PreprocessingKind,
    pub transforms: Vec<FeatureTransform>,
}

impl Preprocessor {
    /// Degenerate features fall back to the identity with a warning.
    pub fn fit(kind: PreprocessingKind, x_train: ArrayView2<f64>) -> Self {
        let n_landmarks = MAX_LANDMARKS.min(x_train.nrows());
        let transforms = x_train
            .axis_iter(Axis(1))
            .enumerate()
            .map(|(j, col)| {
                let values = col.to_vec();
                let fitted = match kind {
                    PreprocessingKind::None => return FeatureTransform::Identity,
                    PreprocessingKind::Standard => Standardizer::fit(j, &values).map(FeatureTransform::Standard),
                    PreprocessingKind::Quantile => {
                        QuantileTransform::fit(j, &values, n_landmarks).map(FeatureTransform::Quantile)
                    }
                };
                fitted.unwrap_or_else(|e| {
                    warn!("{e}; leaving feature {j} untransformed");
                    FeatureTransform::Identity
                })
            })
            .collect();
        Self { kind, transforms }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.transforms.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} columns for a preprocessor fitted on {}",
                x.ncols(),
                self.transforms.len()
            )));
        }
        let mut out = x.to_owned();
        for (mut col, t) in out.axis_iter_mut(Axis(1)).zip(&self.transforms) {
            col.mapv_inplace(|v| t.apply(v));
        }
        Ok(out)
    }
}

/// Standardization of regression targets, fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler(pub Standardizer);

impl TargetScaler {
    pub fn fit(y_train: &[f64]) -> Result<Self> {
        Standardizer::fit(0, y_train)
            .map(TargetScaler)
            .map_err(|_| Error::DegenerateTarget)
    }

    pub fn transform(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|&v| self.0.apply(v)).collect()
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.0.inverse(z)
    }
}
