use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedMatrix;
use crate::error::{Error, Result};
use crate::nn::embedding::EmbeddingSpec;
use crate::nn::layer::{ForwardCtx, Layer, Param};

/// Shape of the MLP backbone: `n_layers` blocks of `Linear -> ReLU -> Dropout`, then a linear head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_layers: usize,
    pub layer_size: usize,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            layer_size: 256,
            dropout: 0.0,
        }
    }
}

/// Per-feature embedding modules feeding an MLP.
///
/// Input is an [`EncodedMatrix`]: block `i` is consumed by feature `i`'s module, and the one-hot
/// categorical block is appended unchanged to the concatenated embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub specs: Vec<EmbeddingSpec>,
    pub embeddings: Vec<Vec<Layer>>,
    pub n_categorical: usize,
    pub backbone_config: MlpConfig,
    pub backbone: Vec<Layer>,
    pub n_outputs: usize,
}

pub fn build_model(
    specs: Vec<EmbeddingSpec>,
    backbone: MlpConfig,
    n_cat_onehot: usize,
    n_outputs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    if n_outputs == 0 {
        return Err(Error::InvalidArgument("model needs at least one output".into()));
    }
    if !(0.0..1.0).contains(&backbone.dropout) {
        return Err(Error::InvalidArgument(format!(
            "dropout {} outside [0, 1)",
            backbone.dropout
        )));
    }
    if backbone.n_layers > 0 && backbone.layer_size == 0 {
        return Err(Error::InvalidArgument("layer_size must be positive".into()));
    }
    let mut embeddings = Vec::with_capacity(specs.len());
    let mut width = n_cat_onehot;
    for (i, spec) in specs.iter().enumerate() {
        spec.validate(i)?;
        let layers = spec.build_layers(rng)?;
        width += stack_width(&layers, spec.input_width());
        embeddings.push(layers);
    }
    if width == 0 {
        return Err(Error::InvalidArgument("model has no input features".into()));
    }
    let mut layers = Vec::with_capacity(3 * backbone.n_layers + 1);
    for _ in 0..backbone.n_layers {
        layers.push(Layer::linear(width, backbone.layer_size, true, rng));
        layers.push(Layer::relu());
        layers.push(Layer::dropout(backbone.dropout));
        width = backbone.layer_size;
    }
    layers.push(Layer::linear(width, n_outputs, true, rng));
    Ok(Model {
        specs,
        embeddings,
        n_categorical: n_cat_onehot,
        backbone_config: backbone,
        backbone: layers,
        n_outputs,
    })
}

fn stack_width(layers: &[Layer], input: usize) -> usize {
    layers.iter().fold(input, |w, l| l.output_width(w))
}

fn check_finite(x: &Array2<f64>, stage: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { stage: stage() })
    }
}

impl Model {
    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    /// Output width of each feature's embedding.
    pub fn embedding_widths(&self) -> Vec<usize> {
        self.specs
            .iter()
            .zip(&self.embeddings)
            .map(|(s, l)| stack_width(l, s.input_width()))
            .collect()
    }

    /// Width of the first backbone layer's input.
    pub fn backbone_input_width(&self) -> usize {
        self.embedding_widths().iter().sum::<usize>() + self.n_categorical
    }

    pub fn params(&self) -> Vec<&Param> {
        self.embeddings
            .iter()
            .flatten()
            .chain(&self.backbone)
            .flat_map(Layer::params)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.embeddings
            .iter_mut()
            .flatten()
            .chain(self.backbone.iter_mut())
            .flat_map(Layer::params_mut)
            .collect()
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn embedding_param_count(&self) -> usize {
        self.embeddings.iter().flatten().map(Layer::n_params).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, input: &EncodedMatrix) -> Result<()> {
        if input.blocks.len() != self.specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature blocks for a model with {} numerical features",
                input.blocks.len(),
                self.specs.len()
            )));
        }
        for (i, (block, spec)) in input.blocks.iter().zip(&self.specs).enumerate() {
            if block.ncols() != spec.input_width() || block.nrows() != input.n_rows() {
                return Err(Error::ShapeMismatch(format!(
                    "feature {i}: block {:?}, expected width {}",
                    block.dim(),
                    spec.input_width()
                )));
            }
        }
        if input.categorical.ncols() != self.n_categorical {
            return Err(Error::ShapeMismatch(format!(
                "{} one-hot columns, expected {}",
                input.categorical.ncols(),
                self.n_categorical
            )));
        }
        Ok(())
    }

    fn concat(&self, parts: Vec<Array2<f64>>, categorical: &Array2<f64>) -> Array2<f64> {
        let n = categorical.nrows();
        let width = parts.iter().map(|p| p.ncols()).sum::<usize>() + categorical.ncols();
        let mut out = Array2::zeros((n, width));
        let mut at = 0;
        for p in parts.iter().chain(std::iter::once(categorical)) {
            out.slice_mut(s![.., at..at + p.ncols()]).assign(p);
            at += p.ncols();
        }
        out
    }

    /// Forward pass that records state for [`Model::backward`]. Dropout is active only when
    /// `train` is set.
    pub fn forward(&mut self, input: &EncodedMatrix, train: bool, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut ctx = ForwardCtx { train, rng };
        let mut parts = Vec::with_capacity(self.embeddings.len());
        for (i, (layers, block)) in self.embeddings.iter_mut().zip(&input.blocks).enumerate() {
            let mut x = block.clone();
            for layer in layers.iter_mut() {
                x = layer.forward(x, &mut ctx);
            }
            check_finite(&x, || format!("embedding of feature {i}"))?;
            parts.push(x);
        }
        let mut x = self.concat(parts, &input.categorical);
        for layer in self.backbone.iter_mut() {
            x = layer.forward(x, &mut ctx);
        }
        check_finite(&x, || "backbone output".into())?;
        Ok(x)
    }

    /// Inference-mode forward pass without recorded state.
    pub fn predict(&self, input: &EncodedMatrix) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut parts = Vec::with_capacity(self.embeddings.len());
        for (i, (layers, block)) in self.embeddings.iter().zip(&input.blocks).enumerate() {
            let x = layers.iter().fold(block.clone(), |x, l| l.apply(x));
            check_finite(&x, || format!("embedding of feature {i}"))?;
            parts.push(x);
        }
        let x = self.concat(parts, &input.categorical);
        let x = self.backbone.iter().fold(x, |x, l| l.apply(x));
        check_finite(&x, || "backbone output".into())?;
        Ok(x)
    }

    /// Accumulates gradients of all parameters for `grad_out = dL/d(outputs)`.
    pub fn backward(&mut self, grad_out: Array2<f64>) -> Result<()> {
        let widths = self.embedding_widths();
        let embeddings_trainable = self.embedding_param_count() > 0;
        let g = backprop(&mut self.backbone, grad_out, embeddings_trainable)?;
        let mut at = 0;
        for (layers, w) in self.embeddings.iter_mut().zip(widths) {
            match &g {
                Some(g) if layers.iter().any(|l| l.n_params() > 0) => {
                    backprop(layers, g.slice(s![.., at..at + w]).to_owned(), false)?;
                }
                _ => layers.iter_mut().for_each(Layer::clear_cache),
            }
            at += w;
        }
        Ok(())
    }

    /// Encodes raw numerical columns with each feature's bin encoder (or passes the scalar
    /// through) and attaches the one-hot block.
    pub fn encode(
        &self,
        x_num: ArrayView2<f64>,
        categorical: Array2<f64>,
        names: Vec<String>,
    ) -> Result<EncodedMatrix> {
        encode_with_specs(&self.specs, x_num, categorical, names)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: Model = serde_json::from_str(text)?;
        for (i, spec) in model.specs.iter().enumerate() {
            spec.validate(i)?;
        }
        model.zero_grad();
        Ok(model)
    }
}

/// Builds model input from raw numerical columns according to per-feature specs.
pub fn encode_with_specs(
    specs: &[EmbeddingSpec],
    x_num: ArrayView2<f64>,
    categorical: Array2<f64>,
    names: Vec<String>,
) -> Result<EncodedMatrix> {
    if x_num.ncols() != specs.len() || x_num.nrows() != categorical.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "numerical block {:?} vs {} specs and {} categorical rows",
            x_num.dim(),
            specs.len(),
            categorical.nrows()
        )));
    }
    let blocks = specs
        .iter()
        .zip(x_num.axis_iter(Axis(1)))
        .map(|(spec, col)| match spec.encoder() {
            Some(enc) => enc.encode_column(col),
            None => col.to_owned().insert_axis(Axis(1)),
        })
        .collect();
    Ok(EncodedMatrix {
        blocks,
        categorical,
        names,
    })
}

/// Runs backward through `layers` in reverse. Input gradients are requested only where an
/// earlier layer (or `need_input_grad` for the stack's own input) still needs them.
fn backprop(layers: &mut [Layer], grad_out: Array2<f64>, need_input_grad: bool) -> Result<Option<Array2<f64>>> {
    let mut needs: Vec<bool> = Vec::with_capacity(layers.len());
    let mut any = need_input_grad;
    for layer in layers.iter() {
        needs.push(any);
        any |= layer.n_params() > 0;
    }
    let mut g = Some(grad_out);
    for (j, layer) in layers.iter_mut().enumerate().rev() {
        match g.take() {
            Some(grad) => g = layer.backward(grad, needs[j])?,
            None => layer.clear_cache(),
        }
        if !needs[j] {
            g = None;
        }
    }
    Ok(g)
}
