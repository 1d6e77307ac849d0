//! Non-learned scalar encodings and the periodic map.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binning::BinLayout;
use crate::error::{Error, Result};

/// Piecewise linear encoding of `x`, written into `out` (length `T`).
///
/// Bins before the one containing `x` get 1, bins after it get 0 and the containing bin gets the
/// relative position of `x` inside it. Values below `b_0` or at/above `b_T` extrapolate linearly
/// in the first or last component.
pub fn ple_encode_into(x: f64, bins: &BinLayout, out: &mut [f64]) {
    let b = bins.boundaries();
    debug_assert_eq!(out.len(), bins.n_bins());
    let c = bins.bin_index(x);
    out[..c].fill(1.0);
    out[c] = (x - b[c]) / (b[c + 1] - b[c]);
    out[c + 1..].fill(0.0);
}

pub fn ple_encode(x: f64, bins: &BinLayout) -> Vec<f64> {
    let mut out = vec![0.0; bins.n_bins()];
    ple_encode_into(x, bins, &mut out);
    out
}

/// Like PLE, but the containing bin is set to 1 instead of the fraction. Inputs below `b_0` map
/// to all zeros, inputs at or above `b_T` to all ones.
pub fn binary_encode_into(x: f64, bins: &BinLayout, out: &mut [f64]) {
    let b = bins.boundaries();
    if x < b[0] {
        out.fill(0.0);
        return;
    }
    if x >= b[b.len() - 1] {
        out.fill(1.0);
        return;
    }
    let c = bins.bin_index(x);
    out[..=c].fill(1.0);
    out[c + 1..].fill(0.0);
}

pub fn binary_encode(x: f64, bins: &BinLayout) -> Vec<f64> {
    let mut out = vec![0.0; bins.n_bins()];
    binary_encode_into(x, bins, &mut out);
    out
}

/// Gaussian soft binning. The position of `x` is normalized through the PLE cumulative sum,
/// `x_hat = clamp(sum(PLE(x)) / T, 0, 1)`, and component `t` is a kernel of width `T^-gamma`
/// centred at `(t - 0.5) / T`.
pub fn one_blob_encode_into(x: f64, bins: &BinLayout, gamma: f64, out: &mut [f64]) {
    let t = bins.n_bins();
    ple_encode_into(x, bins, out);
    let tf = t as f64;
    let x_hat = (out.iter().sum::<f64>() / tf).clamp(0.0, 1.0);
    let width = tf.powf(-gamma);
    let denom = 2.0 * width * width;
    for (i, o) in out.iter_mut().enumerate() {
        let center = (i as f64 + 0.5) / tf;
        let d = x_hat - center;
        *o = (-(d * d) / denom).exp();
    }
}

pub fn one_blob_encode(x: f64, bins: &BinLayout, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; bins.n_bins()];
    one_blob_encode_into(x, bins, gamma, &mut out);
    out
}

/// Which bin-based encoding a feature uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncodingKind {
    #[default]
    Ple,
    Binary,
    OneBlob {
        gamma: f64,
    },
}

impl EncodingKind {
    pub fn encode_into(&self, x: f64, bins: &BinLayout, out: &mut [f64]) {
        match *self {
            EncodingKind::Ple => ple_encode_into(x, bins, out),
            EncodingKind::Binary => binary_encode_into(x, bins, out),
            EncodingKind::OneBlob { gamma } => one_blob_encode_into(x, bins, gamma, out),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EncodingKind::OneBlob { gamma } if !(gamma > 0.0) => {
                Err(Error::InvalidArgument("one-blob gamma must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for EncodingKind {
    type Err = Error;

    /// Accepts `ple`, `binary`, `one-blob` (gamma 1) or `one-blob:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ple" | "piecewise-linear" => Ok(EncodingKind::Ple),
            "binary" => Ok(EncodingKind::Binary),
            "one-blob" => Ok(EncodingKind::OneBlob { gamma: 1.0 }),
            other => match other.strip_prefix("one-blob:") {
                Some(g) => {
                    let gamma: f64 = g
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad one-blob gamma `{g}`")))?;
                    let kind = EncodingKind::OneBlob { gamma };
                    kind.validate()?;
                    Ok(kind)
                }
                None => Err(Error::InvalidArgument(format!("unknown encoding `{s}`"))),
            },
        }
    }
}

/// A bin-based encoder for one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncodingKind,
    pub bins: BinLayout,
}

impl Encoder {
    pub fn width(&self) -> usize {
        self.bins.n_bins()
    }

    pub fn encode_column(&self, column: ArrayView1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((column.len(), self.width()));
        for (x, mut row) in column.iter().zip(out.axis_iter_mut(Axis(0))) {
            let row = row.as_slice_mut().expect("fresh arrays are contiguous");
            self.kind.encode_into(*x, &self.bins, row);
        }
        out
    }
}

/// Frequencies of a periodic embedding and the scale they were drawn with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicCoefficients {
    pub c: Vec<f64>,
    pub sigma: f64,
}

/// Draws `k` frequencies i.i.d. from `Normal(0, sigma)`.
pub fn init_periodic<R: Rng + ?Sized>(k: usize, sigma: f64, rng: &mut R) -> Result<PeriodicCoefficients> {
    if k == 0 {
        return Err(Error::InvalidArgument("periodic k must be at least 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let c = (0..k).map(|_| normal.sample(rng)).collect();
    Ok(PeriodicCoefficients { c, sigma })
}

/// `[sin(2 pi c_1 x), ..., sin(2 pi c_k x), cos(2 pi c_1 x), ..., cos(2 pi c_k x)]`.
pub fn periodic_map(x: f64, c: &[f64]) -> Vec<f64> {
    let k = c.len();
    let mut out = vec![0.0; 2 * k];
    for (j, &cj) in c.iter().enumerate() {
        let (s, co) = (2.0 * PI * cj * x).sin_cos();
        out[j] = s;
        out[k + j] = co;
    }
    out
}

/// Vector-Jacobian product of [`periodic_map`]: given `upstream = dL/d(output)`, returns
/// `(dL/dc, dL/dx)`.
pub fn periodic_vjp(x: f64, c: &[f64], upstream: &[f64]) -> (Vec<f64>, f64) {
    let k = c.len();
    assert_eq!(upstream.len(), 2 * k, "upstream gradient must have length 2k");
    let mut dc = vec![0.0; k];
    let mut dx = 0.0;
    for (j, &cj) in c.iter().enumerate() {
        let (s, co) = (2.0 * PI * cj * x).sin_cos();
        let dv = co * upstream[j] - s * upstream[k + j];
        dc[j] = dv * 2.0 * PI * x;
        dx += dv * 2.0 * PI * cj;
    }
    (dc, dx)
}

/// Fourier features with a fixed mixing matrix `B` (`m_out x m`), applied to the whole feature
/// vector at once: `[sin(2 pi B x), cos(2 pi B x)]`. Unlike the per-feature embeddings this mixes
/// features before the nonlinearity and is never trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedFourier {
    pub b: Array2<f64>,
}

impl MixedFourier {
    pub fn new<R: Rng + ?Sized>(m_out: usize, m: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if !(sigma > 0.0) || m_out == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "mixed Fourier features need positive sigma and dimensions".into(),
            ));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let b = Array2::from_shape_simple_fn((m_out, m), || normal.sample(rng));
        Ok(Self { b })
    }

    pub fn from_matrix(b: Array2<f64>) -> Self {
        Self { b }
    }

    pub fn output_width(&self) -> usize {
        2 * self.b.nrows()
    }

    fn preactivation(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.b.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has length {}, mixing matrix expects {}",
                x.len(),
                self.b.ncols()
            )));
        }
        Ok(self.b.dot(&ArrayView1::from(x)) * (2.0 * PI))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.preactivation(x)?;
        let m_out = v.len();
        let mut out = vec![0.0; 2 * m_out];
        for (j, vj) in v.iter().enumerate() {
            let (s, c) = vj.sin_cos();
            out[j] = s;
            out[m_out + j] = c;
        }
        Ok(out)
    }

    /// `dL/dx` for an upstream gradient over the `2 m_out` outputs.
    pub fn grad_x(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let v = self.preactivation(x)?;
        let m_out = v.len();
        if upstream.len() != 2 * m_out {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                2 * m_out
            )));
        }
        let dv: Array1<f64> = v
            .iter()
            .enumerate()
            .map(|(j, vj)| {
                let (s, c) = vj.sin_cos();
                (c * upstream[j] - s * upstream[m_out + j]) * 2.0 * PI
            })
            .collect();
        Ok(self.b.t().dot(&dv).to_vec())
    }
}

/// Model-ready representation of one data split: one block per numerical feature (either the
/// scalar column or its precomputed bin encoding) plus the one-hot categorical block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub blocks: Vec<Array2<f64>>,
    pub categorical: Array2<f64>,
    /// Feature names used for CSV headers.
    pub names: Vec<String>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.categorical.nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.select(Axis(0), rows)).collect(),
            categorical: self.categorical.select(Axis(0), rows),
            names: self.names.clone(),
        }
    }

    /// Writes the matrix row-major as CSV: one column per block component, then the one-hot
    /// columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let name = self.names.get(i).cloned().unwrap_or_else(|| format!("f{i}"));
            if block.ncols() == 1 {
                header.push(name);
            } else {
                header.extend((0..block.ncols()).map(|t| format!("{name}_bin{}", t + 1)));
            }
        }
        header.extend((0..self.categorical.ncols()).map(|j| format!("onehot{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            for block in &self.blocks {
                record.extend(block.row(r).iter().map(|v| v.to_string()));
            }
            record.extend(self.categorical.row(r).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
