//! From a split dataset and a configuration to trained, evaluated runs.

use log::warn;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{quantile_bins, target_aware_bins, BinLayout, TreeBinning};
use crate::data::{Dataset, Guarded, OneHot};
use crate::encoding::{EncodedMatrix, EncodingKind};
use crate::error::{Error, Result};
use crate::nn::embedding::{EmbeddingBase, EmbeddingSpec, ModelName};
use crate::nn::loss::{n_outputs, predictions};
use crate::nn::model::{build_model, encode_with_specs, MlpConfig, Model};
use crate::train::preprocess::{PreprocessingKind, Preprocessor, TargetScaler};
use crate::train::search::{random_search, Params, SearchResult, SearchSpace};
use crate::train::trainer::{task_metric, train, TrainConfig, TrainData, TrainReport};
use crate::Task;

/// Embedding hyperparameters shared by all numerical features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingParams {
    pub d_embed: usize,
    pub k: usize,
    pub sigma: f64,
    /// Requested quantile bin count.
    pub n_bins: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub min_info_gain: f64,
    pub encoding: EncodingKind,
    pub autodis_meta: usize,
    pub autodis_temp: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        let tree = TreeBinning::default();
        Self {
            d_embed: 16,
            k: 16,
            sigma: 1.0,
            n_bins: 32,
            max_leaves: tree.max_leaves,
            min_samples_leaf: tree.min_samples_leaf,
            min_info_gain: tree.min_info_gain,
            encoding: EncodingKind::Ple,
            autodis_meta: 16,
            autodis_temp: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelName,
    pub preprocessing: PreprocessingKind,
    pub embedding: EmbeddingParams,
    pub backbone: MlpConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "MLP".parse().expect("valid name"),
            preprocessing: PreprocessingKind::Quantile,
            embedding: EmbeddingParams::default(),
            backbone: MlpConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "`{name}` must be a non-negative integer, got {v}"
        )))
    }
}

impl ExperimentConfig {
    /// Overrides fields from sampled hyperparameters. Unknown names are rejected.
    pub fn with_params(&self, params: &Params) -> Result<Self> {
        let mut c = self.clone();
        for (name, &v) in params {
            match name.as_str() {
                "n_layers" => c.backbone.n_layers = as_count(name, v)?,
                "layer_size" => c.backbone.layer_size = as_count(name, v)?,
                "dropout" => c.backbone.dropout = v,
                "learning_rate" => c.train.learning_rate = v,
                "weight_decay" => c.train.weight_decay = v,
                "d_embed" => c.embedding.d_embed = as_count(name, v)?,
                "k" => c.embedding.k = as_count(name, v)?,
                "sigma" => c.embedding.sigma = v,
                "n_bins" => c.embedding.n_bins = as_count(name, v)?,
                "max_leaves" => c.embedding.max_leaves = as_count(name, v)?,
                "min_samples_leaf" => c.embedding.min_samples_leaf = as_count(name, v)?,
                "min_info_gain" => c.embedding.min_info_gain = v,
                "autodis_meta" => c.embedding.autodis_meta = as_count(name, v)?,
                "autodis_temp" => c.embedding.autodis_temp = v,
                other => return Err(Error::InvalidArgument(format!("unknown hyperparameter `{other}`"))),
            }
        }
        Ok(c)
    }

    /// Default search space for this configuration's model.
    pub fn search_space(&self) -> SearchSpace {
        SearchSpace::mlp().merge(SearchSpace::embedding(self.model.embedding))
    }
}

/// Test inputs and original-unit targets.
pub type TestSplit = (EncodedMatrix, Vec<f64>);

/// Preprocessed, binned and encoded splits ready for training.
#[derive(Debug)]
pub struct Prepared {
    pub task: Task,
    pub n_classes: usize,
    pub specs: Vec<EmbeddingSpec>,
    pub preprocessor: Preprocessor,
    pub one_hot: OneHot,
    pub target_scaler: Option<TargetScaler>,
    pub train: EncodedMatrix,
    /// Standardized for regression.
    pub y_train: Vec<f64>,
    pub val: EncodedMatrix,
    pub y_val: Vec<f64>,
    /// Every access is counted.
    pub test: Guarded<TestSplit>,
    /// Features whose binning failed and fell back to the raw scalar.
    pub fallback_features: Vec<usize>,
}

impl Prepared {
    pub fn n_outputs(&self) -> usize {
        n_outputs(self.task, self.n_classes)
    }

    pub fn bin_layouts(&self) -> Vec<BinLayout> {
        self.specs.iter().filter_map(|s| s.bins.clone()).collect()
    }
}

/// Fits preprocessing, target scaling, one-hot encoding and bins on the training split, then
/// encodes all splits.
pub fn prepare(dataset: &Dataset, config: &ExperimentConfig) -> Result<Prepared> {
    let splits = dataset.splits()?;
    let rows = |idx: &[usize]| dataset.x_num.select(Axis(0), idx);
    let preprocessor = Preprocessor::fit(config.preprocessing, rows(&splits.train).view());
    let x_train = preprocessor.apply(rows(&splits.train).view())?;
    let x_val = preprocessor.apply(rows(&splits.val).view())?;
    let x_test = preprocessor.apply(rows(&splits.test).view())?;

    let y_train_raw = dataset.targets(&splits.train);
    let target_scaler = match dataset.task {
        Task::Regression => Some(TargetScaler::fit(&y_train_raw)?),
        _ => None,
    };
    let y_train = match target_scaler {
        Some(s) => s.transform(&y_train_raw),
        None => y_train_raw,
    };

    let kind = config.model.embedding;
    let p = &config.embedding;
    let tree = TreeBinning {
        max_leaves: p.max_leaves,
        min_samples_leaf: p.min_samples_leaf,
        min_info_gain: p.min_info_gain,
    };
    let mut specs = Vec::with_capacity(x_train.ncols());
    let mut fallback_features = Vec::new();
    for (j, col) in x_train.axis_iter(Axis(1)).enumerate() {
        let mut spec = EmbeddingSpec::new(kind);
        spec.d_embed = p.d_embed;
        spec.k = p.k;
        spec.sigma = p.sigma;
        spec.encoding = p.encoding;
        spec.autodis_meta = p.autodis_meta;
        spec.autodis_temp = p.autodis_temp;
        let values = col.to_vec();
        let bins = match kind.base {
            EmbeddingBase::Quantile => Some(quantile_bins(j, &values, p.n_bins)),
            EmbeddingBase::Tree => Some(target_aware_bins(j, &values, &y_train, dataset.task, &tree)),
            _ => None,
        };
        match bins {
            Some(Ok(b)) => spec.bins = Some(b),
            Some(Err(e @ Error::DegenerateFeature { .. })) => {
                warn!("{e}; feature {j} uses the raw scalar");
                spec.kind = kind.without_bins();
                fallback_features.push(j);
            }
            Some(Err(e)) => return Err(e),
            None => {}
        }
        spec.validate(j)?;
        specs.push(spec);
    }

    let one_hot = OneHot::fit(dataset.x_cat.view(), &splits.train);
    let encode = |x: Array2<f64>, idx: &[usize]| {
        encode_with_specs(
            &specs,
            x.view(),
            one_hot.transform(dataset.x_cat.view(), idx),
            dataset.num_names.clone(),
        )
    };
    let train = encode(x_train.clone(), &splits.train)?;
    let val = encode(x_val, &splits.val)?;
    let test = encode(x_test, &splits.test)?;
    Ok(Prepared {
        task: dataset.task,
        n_classes: dataset.n_classes(),
        preprocessor,
        one_hot,
        target_scaler,
        train,
        y_train,
        val,
        y_val: dataset.targets(&splits.val),
        test: Guarded::new((test, dataset.targets(&splits.test))),
        specs,
        fallback_features,
    })
}

/// Outcome of training one seed.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub report: TrainReport,
    pub model: Model,
    /// Test predictions (probabilities, or original-unit values), absent for failed runs.
    pub test_predictions: Option<Array2<f64>>,
}

fn build_for_seed(prepared: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_model(
        prepared.specs.clone(),
        config.backbone,
        prepared.one_hot.width(),
        prepared.n_outputs(),
        &mut rng,
    )
}

fn fit_seed(prepared: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<(Model, TrainReport)> {
    let mut model = build_for_seed(prepared, config, seed)?;
    let data = TrainData {
        task: prepared.task,
        train: &prepared.train,
        y_train: &prepared.y_train,
        val: &prepared.val,
        y_val: &prepared.y_val,
        target_scaler: prepared.target_scaler,
    };
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let report = train(&mut model, &data, &train_config)?;
    Ok((model, report))
}

/// Trains one seed and, if training succeeded, evaluates it on the test split. The test split
/// is read exactly once, after training.
pub fn run_seed(prepared: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let (model, mut report) = fit_seed(prepared, config, seed)?;
    let mut test_predictions = None;
    if !report.failed() {
        let (x_test, y_test) = prepared.test.read();
        let out = model.predict(x_test)?;
        report.test_metric = Some(task_metric(prepared.task, &out, y_test, prepared.target_scaler)?);
        let mut preds = predictions(prepared.task, &out);
        if let Some(s) = prepared.target_scaler {
            preds.mapv_inplace(|z| s.inverse(z));
        }
        test_predictions = Some(preds);
    }
    Ok(SeedRun {
        seed,
        report,
        model,
        test_predictions,
    })
}

/// Trains one seed without touching the test split; returns the best validation metric.
pub fn run_seed_val_only(prepared: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<TrainReport> {
    fit_seed(prepared, config, seed).map(|(_, r)| r)
}

/// Random search over `space`; each draw is prepared and trained with `seed`, and scored by
/// its best validation metric.
pub fn tune(
    dataset: &Dataset,
    base: &ExperimentConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<(SearchResult, ExperimentConfig)> {
    let result = random_search(space, budget, seed, dataset.task.higher_is_better(), |params, _| {
        let config = base.with_params(params)?;
        let prepared = prepare(dataset, &config)?;
        let report = run_seed_val_only(&prepared, &config, seed)?;
        match (&report.failure, report.best_val_metric) {
            (None, Some(v)) => Ok(v),
            (failure, _) => Err(Error::NonFiniteActivation {
                stage: failure.clone().unwrap_or_else(|| "no completed epoch".into()),
            }),
        }
    })?;
    let best = base.with_params(&result.best_trial().params)?;
    Ok((result, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gbdt, SynthParams};

    fn small() -> Dataset {
        synth_gbdt(
            &SynthParams {
                n: 300,
                m: 3,
                n_trees: 4,
                depth: 3,
            },
            0,
        )
        .unwrap()
    }

    fn quick(model: &str) -> ExperimentConfig {
        ExperimentConfig {
            model: model.parse().unwrap(),
            backbone: MlpConfig {
                n_layers: 1,
                layer_size: 8,
                dropout: 0.0,
            },
            train: TrainConfig {
                max_epochs: 3,
                batch_size: 64,
                ..Default::default()
            },
            embedding: EmbeddingParams {
                n_bins: 8,
                d_embed: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn test_split_is_read_once_per_seed() {
        let d = small();
        let cfg = quick("MLP-Q-LR");
        let prepared = prepare(&d, &cfg).unwrap();
        assert_eq!(prepared.train.widths(), vec![8, 8, 8]);
        for seed in 0..3 {
            run_seed_val_only(&prepared, &cfg, seed).unwrap();
        }
        assert_eq!(prepared.test.reads(), 0);
        for seed in 0..3 {
            let run = run_seed(&prepared, &cfg, seed).unwrap();
            assert!(run.report.test_metric.is_some());
        }
        assert_eq!(prepared.test.reads(), 3);
    }

    #[test]
    fn constant_features_fall_back_to_scalars() {
        let mut d = small();
        d.x_num.column_mut(1).fill(2.0);
        let prepared = prepare(&d, &quick("MLP-T-LR")).unwrap();
        assert_eq!(prepared.fallback_features, vec![1]);
        assert_eq!(prepared.specs[1].kind.to_string(), "LR");
        assert_eq!(prepared.train.widths()[1], 1);
    }

    #[test]
    fn params_override_fields() {
        let cfg = quick("MLP-PLR");
        let mut p = Params::new();
        p.insert("k".into(), 5.0);
        p.insert("sigma".into(), 0.3);
        p.insert("n_layers".into(), 2.0);
        let c = cfg.with_params(&p).unwrap();
        assert_eq!((c.embedding.k, c.embedding.sigma, c.backbone.n_layers), (5, 0.3, 2));
        p.insert("bogus".into(), 1.0);
        assert!(cfg.with_params(&p).is_err());
    }

    #[test]
    fn tuning_never_reads_the_test_split() {
        let d = small();
        let cfg = quick("MLP-Q");
        let mut space = SearchSpace::embedding(cfg.model.embedding);
        space.insert(
            "learning_rate",
            crate::train::search::Distribution::LogUniform { low: 1e-3, high: 1e-2 },
        );
        let (result, best) = tune(&d, &cfg, &space, 2, 1).unwrap();
        assert_eq!(result.trials.len(), 2);
        let winner = result.best_trial().val_metric.unwrap();
        assert!(result.trials.iter().all(|t| t.val_metric.unwrap() >= winner));
        assert_eq!(best.embedding.n_bins as f64, result.best_trial().params["n_bins"]);
    }
}
