//! Per-feature embedding modules and their naming grammar.
//!
//! Names follow the `Base[-Stages]` pattern: `L`, `LR`, `LRLR` act on the raw scalar; `Q` and `T`
//! are piecewise linear encodings over quantile or tree bins and take an optional `-L`, `-LR` or
//! `-LRLR` suffix; `P`, `PL`, `PLR`, `PLRLR` start from the periodic map; `AutoDis` is the
//! soft-discretization module. The empty name means "no embedding" (the scalar goes straight to
//! the backbone).

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::BinLayout;
use crate::encoding::{ple_encode, Encoder, EncodingKind};
use crate::error::{Error, Result};
use crate::nn::layer::Layer;

/// What the first stage of an embedding does with the scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingBase {
    /// The (preprocessed) scalar itself.
    Raw,
    /// Bin encoding over quantile bins.
    Quantile,
    /// Bin encoding over target-aware bins.
    Tree,
    Periodic,
    AutoDis,
}

/// Trailing `Linear`/`ReLU` stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearStages {
    None,
    L,
    LR,
    LRLR,
}

impl LinearStages {
    fn suffix(self) -> &'static str {
        match self {
            LinearStages::None => "",
            LinearStages::L => "L",
            LinearStages::LR => "LR",
            LinearStages::LRLR => "LRLR",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "" => LinearStages::None,
            "L" => LinearStages::L,
            "LR" => LinearStages::LR,
            "LRLR" => LinearStages::LRLR,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingKind {
    pub base: EmbeddingBase,
    pub stages: LinearStages,
}

impl EmbeddingKind {
    pub const NONE: EmbeddingKind = EmbeddingKind {
        base: EmbeddingBase::Raw,
        stages: LinearStages::None,
    };

    /// All named embeddings, in table order.
    pub const ALL_NAMES: [&'static str; 16] = [
        "L", "LR", "LRLR", "Q", "Q-L", "Q-LR", "Q-LRLR", "T", "T-L", "T-LR", "T-LRLR", "P", "PL", "PLR", "PLRLR",
        "AutoDis",
    ];

    pub fn uses_bins(self) -> bool {
        matches!(self.base, EmbeddingBase::Quantile | EmbeddingBase::Tree)
    }

    pub fn has_linear(self) -> bool {
        self.stages != LinearStages::None || self.base == EmbeddingBase::AutoDis
    }

    /// The same composition on top of the raw scalar; used when a feature cannot be binned.
    pub fn without_bins(self) -> Self {
        if self.uses_bins() {
            EmbeddingKind {
                base: EmbeddingBase::Raw,
                stages: self.stages,
            }
        } else {
            self
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.stages.suffix();
        match self.base {
            EmbeddingBase::Raw => write!(f, "{s}"),
            EmbeddingBase::Quantile | EmbeddingBase::Tree => {
                let b = if self.base == EmbeddingBase::Quantile { "Q" } else { "T" };
                if s.is_empty() {
                    write!(f, "{b}")
                } else {
                    write!(f, "{b}-{s}")
                }
            }
            EmbeddingBase::Periodic => write!(f, "P{s}"),
            EmbeddingBase::AutoDis => write!(f, "AutoDis"),
        }
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownModel {
            name: s.to_string(),
            valid: EmbeddingKind::ALL_NAMES.join(", "),
        };
        if s == "AutoDis" {
            return Ok(EmbeddingKind {
                base: EmbeddingBase::AutoDis,
                stages: LinearStages::None,
            });
        }
        let (base, rest) = if let Some(rest) = s.strip_prefix('Q') {
            (EmbeddingBase::Quantile, rest)
        } else if let Some(rest) = s.strip_prefix('T') {
            (EmbeddingBase::Tree, rest)
        } else if let Some(rest) = s.strip_prefix('P') {
            (EmbeddingBase::Periodic, rest)
        } else {
            (EmbeddingBase::Raw, s)
        };
        let suffix = match base {
            EmbeddingBase::Quantile | EmbeddingBase::Tree => {
                if rest.is_empty() {
                    rest
                } else {
                    rest.strip_prefix('-').filter(|r| !r.is_empty()).ok_or_else(unknown)?
                }
            }
            _ => rest,
        };
        let stages = LinearStages::from_suffix(suffix).ok_or_else(unknown)?;
        Ok(EmbeddingKind { base, stages })
    }
}

/// `Backbone-Embedding` model name, e.g. `MLP`, `MLP-Q-LR`, `MLP-PLR`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelName {
    pub embedding: EmbeddingKind,
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.embedding == EmbeddingKind::NONE {
            write!(f, "MLP")
        } else {
            write!(f, "MLP-{}", self.embedding)
        }
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownModel {
            name: s.to_string(),
            valid: format!(
                "MLP, or MLP-<embedding> with <embedding> one of {}",
                EmbeddingKind::ALL_NAMES.join(", ")
            ),
        };
        let rest = s.strip_prefix("MLP").ok_or_else(unknown)?;
        if rest.is_empty() {
            return Ok(ModelName {
                embedding: EmbeddingKind::NONE,
            });
        }
        let emb = rest.strip_prefix('-').filter(|r| !r.is_empty()).ok_or_else(unknown)?;
        let embedding = emb.parse().map_err(|_| unknown())?;
        Ok(ModelName { embedding })
    }
}

impl TryFrom<String> for ModelName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelName> for String {
    fn from(m: ModelName) -> String {
        m.to_string()
    }
}

/// Declarative description of one feature's embedding module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    /// Output width of every linear stage (and of AutoDis).
    pub d_embed: usize,
    /// Number of periodic frequencies.
    pub k: usize,
    /// Initialization scale of the periodic frequencies.
    pub sigma: f64,
    pub encoding: EncodingKind,
    pub bins: Option<BinLayout>,
    pub autodis_meta: usize,
    pub autodis_temp: f64,
}

impl EmbeddingSpec {
    pub fn new(kind: EmbeddingKind) -> Self {
        Self {
            kind,
            d_embed: 16,
            k: 16,
            sigma: 1.0,
            encoding: EncodingKind::Ple,
            bins: None,
            autodis_meta: 16,
            autodis_temp: 1.0,
        }
    }

    pub fn validate(&self, feature: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::InconsistentSpec { feature, reason });
        let kind = self.kind;
        match (kind.uses_bins(), &self.bins) {
            (true, None) => return bad(format!("`{kind}` requires bin boundaries")),
            (false, Some(_)) => return bad(format!("`{kind}` does not take bin boundaries")),
            _ => {}
        }
        if kind.uses_bins() {
            if let Err(e) = self.encoding.validate() {
                return bad(e.to_string());
            }
        }
        if kind.has_linear() && self.d_embed == 0 {
            return bad("d_embed must be at least 1".into());
        }
        if kind.base == EmbeddingBase::Periodic && (self.k == 0 || !(self.sigma > 0.0)) {
            return bad("periodic embeddings need k >= 1 and sigma > 0".into());
        }
        if kind.base == EmbeddingBase::AutoDis && (self.autodis_meta < 2 || !(self.autodis_temp > 0.0)) {
            return bad("AutoDis needs at least 2 meta-embeddings and a positive temperature".into());
        }
        Ok(())
    }

    /// The bin encoder applied during data preparation, if any.
    pub fn encoder(&self) -> Option<Encoder> {
        self.bins.as_ref().map(|bins| Encoder {
            kind: self.encoding,
            bins: bins.clone(),
        })
    }

    /// Width of the precomputed input block this embedding consumes.
    pub fn input_width(&self) -> usize {
        self.bins.as_ref().map_or(1, BinLayout::n_bins)
    }

    pub fn build_layers(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        let mut width = self.input_width();
        match self.kind.base {
            EmbeddingBase::Raw | EmbeddingBase::Quantile | EmbeddingBase::Tree => {}
            EmbeddingBase::Periodic => {
                layers.push(Layer::periodic(self.k, self.sigma, rng)?);
                width = 2 * self.k;
            }
            EmbeddingBase::AutoDis => {
                let meta = self.autodis_meta;
                layers.push(Layer::linear(1, meta, false, rng));
                layers.push(Layer::leaky_relu());
                layers.push(Layer::linear(meta, meta, false, rng));
                layers.push(Layer::softmax(self.autodis_temp));
                layers.push(Layer::linear(meta, self.d_embed, true, rng));
                width = self.d_embed;
            }
        }
        let d = self.d_embed;
        match self.kind.stages {
            LinearStages::None => {}
            LinearStages::L => layers.push(Layer::linear(width, d, true, rng)),
            LinearStages::LR => {
                layers.push(Layer::linear(width, d, true, rng));
                layers.push(Layer::relu());
            }
            LinearStages::LRLR => {
                layers.push(Layer::linear(width, d, true, rng));
                layers.push(Layer::relu());
                layers.push(Layer::linear(d, d, true, rng));
                layers.push(Layer::relu());
            }
        }
        Ok(layers)
    }
}

/// `v_0 + sum_t e_t v_t`: the embedding obtained by aggregating one vector per bin with the PLE
/// components as weights. `bin_vectors` is `T x d`.
pub fn linear_ple_embed(x: f64, bins: &BinLayout, bias: &[f64], bin_vectors: &Array2<f64>) -> Result<Vec<f64>> {
    if bin_vectors.nrows() != bins.n_bins() || bin_vectors.ncols() != bias.len() {
        return Err(Error::ShapeMismatch(format!(
            "bin vectors {:?} vs {} bins and bias of length {}",
            bin_vectors.dim(),
            bins.n_bins(),
            bias.len()
        )));
    }
    let mut out = bias.to_vec();
    for (e, v) in ple_encode(x, bins).into_iter().zip(bin_vectors.rows()) {
        if e == 0.0 {
            continue;
        }
        for (o, vi) in out.iter_mut().zip(v.iter()) {
            *o += e * vi;
        }
    }
    Ok(out)
}

/// Parameters of an AutoDis embedding for one feature.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoDisParams {
    /// `1 x meta`, no bias.
    pub w1: Array2<f64>,
    /// `meta x meta`, no bias.
    pub w2: Array2<f64>,
    /// `meta x d`: one meta-embedding per row.
    pub meta_embeddings: Array2<f64>,
    pub bias: Vec<f64>,
    pub temperature: f64,
    pub slope: f64,
}

impl AutoDisParams {
    /// Extracts the parameters from layers built for an `AutoDis` spec.
    pub fn from_layers(layers: &[Layer]) -> Option<Self> {
        match layers {
            [Layer::Linear {
                weight: w1, bias: None, ..
            }, Layer::LeakyRelu { slope, .. }, Layer::Linear {
                weight: w2, bias: None, ..
            }, Layer::Softmax { temperature, .. }, Layer::Linear {
                weight: w3,
                bias: Some(b),
                ..
            }] => Some(Self {
                w1: w1.value.clone(),
                w2: w2.value.clone(),
                meta_embeddings: w3.value.clone(),
                bias: b.value.iter().copied().collect(),
                temperature: *temperature,
                slope: *slope,
            }),
            _ => None,
        }
    }
}

/// Direct evaluation of AutoDis: returns the embedding and the softmax weights over the
/// meta-embeddings.
pub fn autodis_embed(x: f64, p: &AutoDisParams) -> (Vec<f64>, Vec<f64>) {
    let meta = p.w1.ncols();
    let hidden: Vec<f64> = (0..meta)
        .map(|j| {
            let v = x * p.w1[[0, j]];
            if v > 0.0 {
                v
            } else {
                p.slope * v
            }
        })
        .collect();
    let logits: Vec<f64> = (0..meta)
        .map(|j| (0..meta).map(|i| hidden[i] * p.w2[[i, j]]).sum::<f64>() / p.temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let d = p.bias.len();
    let out = (0..d)
        .map(|c| p.bias[c] + (0..meta).map(|j| weights[j] * p.meta_embeddings[[j, c]]).sum::<f64>())
        .collect();
    (out, weights)
}
