//! Run configuration: one TOML document, overridable from the command line.

use std::path::{Path, PathBuf};

use numembed::data::{load_csv, split, synth_gbdt, Dataset, Schema, SynthParams, DEFAULT_FRACTIONS};
use numembed::experiment::ExperimentConfig;
use numembed::nn::ModelName;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synth(SynthSource),
    Csv(CsvSource),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth(SynthSource::default())
    }
}

/// Synthetic tree-generated regression data; `seed` drives features, trees and the split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSource {
    pub n: usize,
    pub m: usize,
    pub n_trees: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for SynthSource {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            n: p.n,
            m: p.m,
            n_trees: p.n_trees,
            depth: p.depth,
            seed: 0,
        }
    }
}

impl SynthSource {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            n: self.n,
            m: self.m,
            n_trees: self.n_trees,
            depth: self.depth,
        }
    }
}

/// A headed CSV file. Without an inline `schema`, the sidecar `<stem>.schema.toml` next to the
/// file is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("schema.toml")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory (for `synth`: the CSV file, or a directory to hold `synth.csv`).
    pub out: PathBuf,
    /// Explicit seed list; when absent the seeds are `0..seed_count`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub seed_count: usize,
    /// Number of equal ensemble groups; when absent, 3 if the seed count is a multiple of 3 and
    /// at least 6, otherwise a single group of all seeds (no ensemble for one seed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_groups: Option<usize>,
    /// Random-search draws for `tune`.
    pub budget: usize,
    /// Seed of the random search and of every tuning trial.
    pub tune_seed: u64,
    /// Bin counts for `sweep-bins`.
    pub bin_counts: Vec<usize>,
    pub dataset: DatasetConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/experiment"),
            seeds: None,
            seed_count: 5,
            ensemble_groups: None,
            budget: 20,
            tune_seed: 0,
            bin_counts: vec![2, 8, 32, 128],
            dataset: DatasetConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Command-line overrides; `None` leaves the config value untouched.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed_count: Option<usize>,
    pub out: Option<PathBuf>,
    /// `synth` or a CSV path.
    pub dataset: Option<String>,
    pub model: Option<String>,
    pub bins: Option<Vec<usize>>,
    pub sigma: Option<f64>,
    pub budget: Option<usize>,
}

/// Parses a TOML document; errors name the offending field path.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner().message()))
    })
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(n) = o.seed_count {
            self.seed_count = n;
            self.seeds = None;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(d) = &o.dataset {
            self.dataset = if d == "synth" {
                match &self.dataset {
                    DatasetConfig::Synth(s) => DatasetConfig::Synth(*s),
                    DatasetConfig::Csv(_) => DatasetConfig::default(),
                }
            } else {
                let (schema, split_seed, fractions) = match &self.dataset {
                    DatasetConfig::Csv(c) => (c.schema.clone(), c.split_seed, c.fractions),
                    DatasetConfig::Synth(_) => (None, 0, DEFAULT_FRACTIONS),
                };
                DatasetConfig::Csv(CsvSource {
                    path: PathBuf::from(d),
                    schema,
                    split_seed,
                    fractions,
                })
            };
        }
        if let Some(m) = &o.model {
            self.experiment.model = m.parse::<ModelName>().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(bins) = &o.bins {
            if let [t] = bins.as_slice() {
                self.experiment.embedding.n_bins = *t;
                self.experiment.embedding.max_leaves = *t;
            }
            self.bin_counts = bins.clone();
        }
        if let Some(s) = o.sigma {
            self.experiment.embedding.sigma = s;
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.seed_count as u64).collect())
    }

    pub fn ensemble_groups(&self) -> Option<usize> {
        let n = self.seeds().len();
        match self.ensemble_groups {
            Some(g) => Some(g),
            None if n >= 6 && n.is_multiple_of(3) => Some(3),
            None if n >= 2 => Some(1),
            None => None,
        }
    }

    /// Loads (or generates) the dataset and assigns its splits.
    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        match &self.dataset {
            DatasetConfig::Synth(s) => Ok(synth_gbdt(&s.params(), s.seed)?),
            DatasetConfig::Csv(c) => {
                if !c.path.is_file() {
                    return Err(CliError::Config(format!(
                        "dataset file {} does not exist",
                        c.path.display()
                    )));
                }
                let schema = match &c.schema {
                    Some(s) => s.clone(),
                    None => {
                        let side = sidecar_path(&c.path);
                        let text = std::fs::read_to_string(&side).map_err(|_| {
                            CliError::Config(format!(
                                "no `dataset.schema` given and no schema sidecar at {}",
                                side.display()
                            ))
                        })?;
                        let de = toml::Deserializer::parse(&text).map_err(|e| CliError::Config(e.to_string()))?;
                        serde_path_to_error::deserialize(de).map_err(|e| {
                            CliError::Config(format!("{} at `{}`: {}", side.display(), e.path(), e.inner().message()))
                        })?
                    }
                };
                let mut dataset = load_csv(&c.path, &schema)?;
                split(&mut dataset, c.fractions, c.split_seed)?;
                Ok(dataset)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(parse_config(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(parse_config("").unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_config("[experiment.train]\nlearning_rate = \"fast\"\n").unwrap_err();
        assert!(err.to_string().contains("experiment.train.learning_rate"), "{err}");
        let err = parse_config("[experiment]\nmodel = \"MLP-XYZ\"\n").unwrap_err();
        assert!(
            err.to_string().contains("experiment.model") && err.to_string().contains("PLR"),
            "{err}"
        );
        assert!(parse_config("seed_cuont = 3\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = parse_config("seeds = [4, 5]\n[experiment]\nmodel = \"MLP\"\n").unwrap();
        c.apply(&Overrides {
            seed_count: Some(3),
            model: Some("MLP-Q-LR".into()),
            bins: Some(vec![7]),
            sigma: Some(0.3),
            dataset: Some("data.csv".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.seeds(), vec![0, 1, 2]);
        assert_eq!(c.experiment.model.to_string(), "MLP-Q-LR");
        assert_eq!(c.experiment.embedding.n_bins, 7);
        assert_eq!(c.experiment.embedding.sigma, 0.3);
        assert!(matches!(c.dataset, DatasetConfig::Csv(ref s) if s.path == Path::new("data.csv")));
        let bad = c.apply(&Overrides {
            model: Some("MLP-XYZ".into()),
            ..Default::default()
        });
        assert!(matches!(bad, Err(CliError::Usage(_))));
    }

    #[test]
    fn documented_keys_are_the_defaults() {
        let readme = include_str!("../../../README.md");
        let section = &readme[readme.find("### Configuration keys").unwrap()..];
        let start = section.find("```toml\n").unwrap() + "```toml\n".len();
        let block = &section[start..start + section[start..].find("```").unwrap()];
        assert_eq!(parse_config(block).unwrap(), RunConfig::default());
    }

    #[test]
    fn ensemble_group_defaults() {
        let mut c = RunConfig::default();
        for (n, g) in [(1, None), (3, Some(1)), (5, Some(1)), (15, Some(3))] {
            c.seed_count = n;
            assert_eq!(c.ensemble_groups(), g);
        }
    }
}
