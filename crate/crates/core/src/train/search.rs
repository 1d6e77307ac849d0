//! Random search over hyperparameter distributions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::embedding::{EmbeddingBase, EmbeddingKind};

/// Probability of the point mass in `{value, distribution}` entries.
pub const POINT_MASS_PROB: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Const {
        value: f64,
    },
    /// Inclusive integer range.
    UniformInt {
        low: i64,
        high: i64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `exp(U[ln low, ln high])`.
    LogUniform {
        low: f64,
        high: f64,
    },
    /// `value` with probability `p`, otherwise a draw from `other`.
    PointMass {
        p: f64,
        value: f64,
        other: Box<Distribution>,
    },
}

impl Distribution {
    /// `{0, other}` with the default mixing weight.
    pub fn zero_or(other: Distribution) -> Self {
        Distribution::PointMass {
            p: POINT_MASS_PROB,
            value: 0.0,
            other: Box::new(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Distribution::Const { value } => value.is_finite(),
            Distribution::UniformInt { low, high } => low <= high,
            Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Distribution::LogUniform { low, high } => *low > 0.0 && high.is_finite() && low <= high,
            Distribution::PointMass { p, value, other } => {
                (0.0..=1.0).contains(p) && value.is_finite() && other.validate().is_ok()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Const { value } => *value,
            Distribution::UniformInt { low, high } => rng.gen_range(*low..=*high) as f64,
            Distribution::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.gen_range(*low..*high)
                }
            }
            Distribution::LogUniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.gen_range(low.ln()..high.ln()).exp()
                }
            }
            Distribution::PointMass { p, value, other } => {
                if rng.gen::<f64>() < *p {
                    *value
                } else {
                    other.sample(rng)
                }
            }
        }
    }
}

/// Named hyperparameter distributions. Integer-valued entries are sampled as whole `f64`s.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace(pub BTreeMap<String, Distribution>);

pub type Params = BTreeMap<String, f64>;

impl SearchSpace {
    pub fn insert(&mut self, name: &str, d: Distribution) {
        self.0.insert(name.to_string(), d);
    }

    pub fn merge(mut self, other: SearchSpace) -> Self {
        self.0.extend(other.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.0.values().try_for_each(Distribution::validate)
    }

    /// Draws every entry in key order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        self.0.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect()
    }

    /// Backbone and optimizer space.
    pub fn mlp() -> Self {
        let mut s = Self::default();
        s.insert("n_layers", Distribution::UniformInt { low: 1, high: 16 });
        s.insert("layer_size", Distribution::UniformInt { low: 1, high: 1024 });
        s.insert(
            "dropout",
            Distribution::zero_or(Distribution::Uniform { low: 0.0, high: 0.5 }),
        );
        s.insert("learning_rate", Distribution::LogUniform { low: 5e-5, high: 0.005 });
        s.insert(
            "weight_decay",
            Distribution::zero_or(Distribution::LogUniform { low: 1e-6, high: 1e-3 }),
        );
        s
    }

    /// Entries relevant to one embedding kind.
    pub fn embedding(kind: EmbeddingKind) -> Self {
        let mut s = Self::default();
        if kind.has_linear() {
            s.insert("d_embed", Distribution::UniformInt { low: 1, high: 128 });
        }
        match kind.base {
            EmbeddingBase::Quantile => s.insert("n_bins", Distribution::UniformInt { low: 2, high: 256 }),
            EmbeddingBase::Tree => {
                s.insert("max_leaves", Distribution::UniformInt { low: 2, high: 256 });
                s.insert("min_samples_leaf", Distribution::UniformInt { low: 1, high: 128 });
                s.insert("min_info_gain", Distribution::LogUniform { low: 1e-9, high: 0.01 });
            }
            EmbeddingBase::Periodic => {
                s.insert("k", Distribution::UniformInt { low: 1, high: 128 });
                s.insert("sigma", Distribution::LogUniform { low: 0.01, high: 100.0 });
            }
            EmbeddingBase::AutoDis => {
                s.insert("autodis_meta", Distribution::UniformInt { low: 2, high: 64 });
                s.insert("autodis_temp", Distribution::LogUniform { low: 0.01, high: 10.0 });
            }
            EmbeddingBase::Raw => {}
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Params,
    /// Validation metric, absent when the trial failed.
    pub val_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    pub best: usize,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Draws `budget` configurations i.i.d. and evaluates each with `objective`, which returns the
/// validation metric. The best finite metric wins; ties go to the earlier draw. Failed trials are
/// recorded and never win.
pub fn random_search<F>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    higher_is_better: bool,
    mut objective: F,
) -> Result<SearchResult>
where
    F: FnMut(&Params, usize) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::InvalidArgument("search budget must be positive".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for i in 0..budget {
        let params = space.sample(&mut rng);
        let (val_metric, error) = match objective(&params, i) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite validation metric {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(v) = val_metric {
            let better = match best {
                None => true,
                Some((_, b)) if higher_is_better => v > b,
                Some((_, b)) => v < b,
            };
            if better {
                best = Some((i, v));
            }
        }
        trials.push(Trial {
            params,
            val_metric,
            error,
        });
    }
    let best = best
        .ok_or_else(|| Error::InvalidArgument("every search trial failed".into()))?
        .0;
    Ok(SearchResult { trials, best })
}
