//! Datasets: CSV loading, splitting, one-hot encoding and a synthetic tree-generated task.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Task;

/// Default train/val/test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.64, 0.16, 0.20];

/// Disjoint row index sets. Each is sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x m` numerical features.
    pub x_num: Array2<f64>,
    /// `n x c` label-encoded categorical features.
    pub x_cat: Array2<usize>,
    pub num_names: Vec<String>,
    pub cat_names: Vec<String>,
    /// Original string values per categorical column, indexed by code.
    pub cat_levels: Vec<Vec<String>>,
    /// Real targets, or class indices stored as `f64`.
    pub y: Vec<f64>,
    pub target_name: String,
    /// Original class labels, indexed by class (empty for regression).
    pub class_names: Vec<String>,
    pub task: Task,
    pub splits: Option<Splits>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn splits(&self) -> Result<&Splits> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has not been split".into()))
    }

    pub fn targets(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.y[r]).collect()
    }

    /// Writes the dataset as CSV: numerical columns, categorical columns (original values),
    /// then the target.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.num_names.iter().map(String::as_str).collect();
        header.extend(self.cat_names.iter().map(String::as_str));
        header.push(&self.target_name);
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.x_num.row(r).iter().map(|v| v.to_string()).collect();
            for (c, levels) in self.cat_levels.iter().enumerate() {
                rec.push(levels[self.x_cat[[r, c]]].clone());
            }
            rec.push(if self.task.is_classification() {
                self.class_names[self.y[r] as usize].clone()
            } else {
                self.y[r].to_string()
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Column roles for CSV loading. Columns that are neither the target, categorical nor ignored
/// are numerical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub target: String,
    pub task: Task,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Parses a headed CSV. Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` not found in header")))
    };
    let target_col = find(&schema.target)?;
    let cat_cols = schema.categorical.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    for c in &schema.ignore {
        find(c)?;
    }
    let num_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != target_col && !cat_cols.contains(&i) && !schema.ignore.contains(&headers[i]))
        .collect();

    let mut num_values = Vec::new();
    let mut cat_codes: Vec<Vec<usize>> = Vec::new();
    let mut cat_maps: Vec<HashMap<String, usize>> = vec![HashMap::new(); cat_cols.len()];
    let mut cat_levels: Vec<Vec<String>> = vec![Vec::new(); cat_cols.len()];
    let mut raw_targets = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for &c in &num_cols {
            num_values.push(parse_number(&record[c], row, &headers[c])?);
        }
        let mut codes = Vec::with_capacity(cat_cols.len());
        for (j, &c) in cat_cols.iter().enumerate() {
            let value = record[c].trim();
            if value.is_empty() {
                return Err(parse_error(row, &headers[c], "missing value"));
            }
            let next = cat_levels[j].len();
            let code = *cat_maps[j].entry(value.to_string()).or_insert(next);
            if code == next {
                cat_levels[j].push(value.to_string());
            }
            codes.push(code);
        }
        cat_codes.push(codes);
        let t = record[target_col].trim();
        if t.is_empty() {
            return Err(parse_error(row, &schema.target, "missing target"));
        }
        raw_targets.push(t.to_string());
    }
    let n = raw_targets.len();
    if n == 0 {
        return Err(Error::SchemaMismatch("no data rows".into()));
    }

    let (y, class_names) = if schema.task.is_classification() {
        let classes: Vec<String> = raw_targets
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let ok = match schema.task {
            Task::BinClass => classes.len() == 2,
            _ => classes.len() >= 2,
        };
        if !ok {
            return Err(Error::SchemaMismatch(format!(
                "{:?} task but the target has {} distinct values",
                schema.task,
                classes.len()
            )));
        }
        let y = raw_targets
            .iter()
            .map(|t| classes.binary_search(t).expect("class present") as f64)
            .collect();
        (y, classes)
    } else {
        let y = raw_targets
            .iter()
            .enumerate()
            .map(|(i, t)| parse_number(t, i + 1, &schema.target))
            .collect::<Result<Vec<_>>>()?;
        (y, Vec::new())
    };

    let x_num = Array2::from_shape_vec((n, num_cols.len()), num_values).expect("row-major fill");
    let x_cat = Array2::from_shape_fn((n, cat_cols.len()), |(r, c)| cat_codes[r][c]);
    Ok(Dataset {
        x_num,
        x_cat,
        num_names: num_cols.iter().map(|&c| headers[c].clone()).collect(),
        cat_names: cat_cols.iter().map(|&c| headers[c].clone()).collect(),
        cat_levels,
        y,
        target_name: schema.target.clone(),
        class_names,
        task: schema.task,
        splits: None,
    })
}

fn parse_error(row: usize, column: &str, message: &str) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.to_string(),
    }
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    let field = field.trim();
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(parse_error(row, column, "non-finite value")),
        Err(_) if field.is_empty() => Err(parse_error(row, column, "missing value")),
        Err(_) => Err(parse_error(row, column, &format!("cannot parse `{field}` as a number"))),
    }
}

/// Split sizes for `n` rows: validation and test take `ceil(fraction * n)`, train the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    // the slack absorbs representation error in products such as 0.2 * 20640
    let take = |f: f64| ((f * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let (n_val, n_test) = (take(fractions[1]), take(fractions[2]));
    let n_train = n.checked_sub(n_val + n_test).ok_or(Error::EmptySplit("train"))?;
    for (size, name) in [(n_train, "train"), (n_val, "val"), (n_test, "test")] {
        if size == 0 {
            return Err(Error::EmptySplit(name));
        }
    }
    Ok([n_train, n_val, n_test])
}

/// Random split of `n` rows, stratified by class when `labels` are given.
pub fn split_indices(n: usize, labels: Option<&[f64]>, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let [_, n_val, n_test] = split_sizes(n, fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            // interleave classes so that every prefix keeps the class proportions
            let mut by_class: Vec<Vec<usize>> = Vec::new();
            for (i, &y) in labels.iter().enumerate() {
                let c = y as usize;
                if by_class.len() <= c {
                    by_class.resize(c + 1, Vec::new());
                }
                by_class[c].push(i);
            }
            let mut keyed = Vec::with_capacity(n);
            for (c, members) in by_class.iter_mut().enumerate() {
                members.shuffle(&mut rng);
                let m = members.len() as f64;
                for (rank, &i) in members.iter().enumerate() {
                    keyed.push(((rank as f64 + 0.5) / m, c, i));
                }
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|k| k.2).collect()
        }
    };
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Splits { train, val, test })
}

/// Splits the dataset in place; classification tasks are stratified.
pub fn split(dataset: &mut Dataset, fractions: [f64; 3], seed: u64) -> Result<()> {
    let labels = dataset.task.is_classification().then_some(dataset.y.as_slice());
    dataset.splits = Some(split_indices(dataset.n_rows(), labels, fractions, seed)?);
    Ok(())
}

/// One-hot encoder fitted on the categories seen in the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    /// Per column: sorted codes seen during fitting.
    pub categories: Vec<Vec<usize>>,
}

impl OneHot {
    pub fn fit(x_cat: ArrayView2<usize>, rows: &[usize]) -> Self {
        let categories = x_cat
            .axis_iter(Axis(1))
            .map(|col| {
                rows.iter()
                    .map(|&r| col[r])
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        Self { categories }
    }

    pub fn width(&self) -> usize {
        self.categories.iter().map(Vec::len).sum()
    }

    /// Unseen codes map to an all-zero block for their column.
    pub fn transform(&self, x_cat: ArrayView2<usize>, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.width()));
        let mut offset = 0;
        for (c, cats) in self.categories.iter().enumerate() {
            for (i, &r) in rows.iter().enumerate() {
                if let Ok(pos) = cats.binary_search(&x_cat[[r, c]]) {
                    out[[i, offset + pos]] = 1.0;
                }
            }
            offset += cats.len();
        }
        out
    }
}

/// Parameters of the synthetic tree-generated regression task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub m: usize,
    pub n_trees: usize,
    pub depth: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n: 10_000,
            m: 8,
            n_trees: 16,
            depth: 6,
        }
    }
}

/// A complete binary tree in heap order: node `i` has children `2i + 1` and `2i + 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomTree {
    pub features: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub leaves: Vec<f64>,
}

impl RandomTree {
    fn sample(m: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let n_internal = (1usize << depth) - 1;
        let mut features = Vec::with_capacity(n_internal);
        let mut thresholds = Vec::with_capacity(n_internal);
        for _ in 0..n_internal {
            features.push(rng.gen_range(0..m));
            thresholds.push(rng.sample(StandardNormal));
        }
        let leaves = (0..1usize << depth).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            features,
            thresholds,
            leaves,
        }
    }

    /// Values below the threshold go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        while node < self.features.len() {
            node = if x[self.features[node]] < self.thresholds[node] {
                2 * node + 1
            } else {
                2 * node + 2
            };
        }
        self.leaves[node - self.features.len()]
    }
}

/// The tree ensemble behind [`synth_gbdt`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthGenerator {
    pub trees: Vec<RandomTree>,
}

impl SynthGenerator {
    /// Raw target before standardization: the mean of the tree outputs.
    pub fn target(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// All thresholds applied to `feature`, sorted.
    pub fn thresholds_for(&self, feature: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .trees
            .iter()
            .flat_map(|t| {
                t.features
                    .iter()
                    .zip(&t.thresholds)
                    .filter(|(f, _)| **f == feature)
                    .map(|(_, th)| *th)
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

/// Features, raw targets and the generator of the synthetic task, before standardization and
/// splitting.
pub fn synth_raw(params: &SynthParams, seed: u64) -> Result<(Array2<f64>, Vec<f64>, SynthGenerator)> {
    if params.n == 0 || params.m == 0 || params.n_trees == 0 {
        return Err(Error::InvalidArgument("synthetic parameters must be positive".into()));
    }
    if params.depth >= usize::BITS as usize - 1 {
        return Err(Error::InvalidArgument(format!(
            "tree depth {} is too large",
            params.depth
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let x = Array2::from_shape_simple_fn((params.n, params.m), || rng.sample(StandardNormal));
    rng.set_stream(2);
    let generator = SynthGenerator {
        trees: (0..params.n_trees)
            .map(|_| RandomTree::sample(params.m, params.depth, &mut rng))
            .collect(),
    };
    let y = x
        .axis_iter(Axis(0))
        .map(|row| generator.target(row.as_slice().expect("standard layout")))
        .collect();
    Ok((x, y, generator))
}

/// Synthetic regression task whose target is the mean of random axis-aligned trees over
/// standard normal features. The target is standardized over the whole dataset and the rows are
/// split with [`DEFAULT_FRACTIONS`].
pub fn synth_gbdt(params: &SynthParams, seed: u64) -> Result<Dataset> {
    let (x_num, raw, _) = synth_raw(params, seed)?;
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::DegenerateTarget);
    }
    let y = raw.iter().map(|v| (v - mean) / sd).collect();
    let mut dataset = Dataset {
        x_num,
        x_cat: Array2::zeros((params.n, 0)),
        num_names: (0..params.m).map(|i| format!("x{i}")).collect(),
        cat_names: Vec::new(),
        cat_levels: Vec::new(),
        y,
        target_name: "y".into(),
        class_names: Vec::new(),
        task: Task::Regression,
        splits: None,
    };
    split(&mut dataset, DEFAULT_FRACTIONS, seed)?;
    Ok(dataset)
}

/// Wraps a value and counts how often it is read.
#[derive(Debug)]
pub struct Guarded<T> {
    inner: T,
    reads: AtomicUsize,
}

impl<T> Guarded<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn read(&self) -> &T {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.inner
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(task: Task, cat: &[&str]) -> Schema {
        Schema {
            target: "y".into(),
            task,
            categorical: cat.iter().map(|s| s.to_string()).collect(),
            ignore: Vec::new(),
        }
    }

    #[test]
    fn loads_numeric_regression_csv() {
        let text = "a,b,y\n1,2,0.5\n3,4,1.5\n5,6,2.5\n";
        let d = read_csv(text.as_bytes(), &schema(Task::Regression, &[])).unwrap();
        assert_eq!(d.x_num.dim(), (3, 2));
        assert_eq!(d.y, vec![0.5, 1.5, 2.5]);
        assert_eq!(d.num_names, vec!["a", "b"]);
    }

    #[test]
    fn categorical_codes_and_one_hot() {
        let text = "c,x,y\na,1,0\nb,2,1\na,3,0\n";
        let d = read_csv(text.as_bytes(), &schema(Task::BinClass, &["c"])).unwrap();
        assert_eq!(d.x_cat.column(0).to_vec(), vec![0, 1, 0]);
        let oh = OneHot::fit(d.x_cat.view(), &[0, 1, 2]);
        assert_eq!(oh.width(), 2);
        let m = oh.transform(d.x_cat.view(), &[0, 1, 2]);
        for row in m.rows() {
            assert_eq!(row.sum(), 1.0);
        }
        let partial = OneHot::fit(d.x_cat.view(), &[0, 2]);
        assert_eq!(partial.transform(d.x_cat.view(), &[1]).sum(), 0.0);
    }

    #[test]
    fn parse_errors_carry_the_row() {
        let missing = "a,y\n1,2\n2,\n";
        match read_csv(missing.as_bytes(), &schema(Task::Regression, &[])) {
            Err(Error::Parse { row: 2, column, .. }) => assert_eq!(column, "y"),
            other => panic!("{other:?}"),
        }
        let bad = "a,y\n1,2\nfoo,3\n";
        assert!(matches!(
            read_csv(bad.as_bytes(), &schema(Task::Regression, &[])),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(matches!(
            read_csv("a,z\n1,2\n".as_bytes(), &schema(Task::Regression, &[])),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn split_size_examples() {
        assert_eq!(split_sizes(20640, DEFAULT_FRACTIONS).unwrap(), [13209, 3303, 4128]);
        assert_eq!(split_sizes(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert!(matches!(split_sizes(2, [0.8, 0.1, 0.1]), Err(Error::EmptySplit(_))));
        assert!(split_sizes(10, [0.5, 0.1, 0.1]).is_err());
    }

    #[test]
    fn stratified_split_keeps_balance() {
        let labels: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let s = split_indices(200, Some(&labels), DEFAULT_FRACTIONS, 3).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            let ones = part.iter().filter(|&&i| labels[i] == 1.0).count() as i64;
            let zeros = part.len() as i64 - ones;
            assert!((ones - zeros).abs() <= 2, "{ones} vs {zeros}");
        }
    }

    #[test]
    fn synth_is_deterministic_and_standardized() {
        let p = SynthParams {
            n: 500,
            ..Default::default()
        };
        let a = synth_gbdt(&p, 7).unwrap();
        let b = synth_gbdt(&p, 7).unwrap();
        assert_eq!(a, b);
        let mean = a.y.iter().sum::<f64>() / 500.0;
        assert!(mean.abs() < 1e-12);
        let s = a.splits().unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (320, 80, 100));
    }

    #[test]
    fn depth_zero_is_degenerate() {
        let p = SynthParams {
            n: 100,
            depth: 0,
            ..Default::default()
        };
        assert!(matches!(synth_gbdt(&p, 1), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn csv_export_round_trips() {
        let p = SynthParams {
            n: 50,
            m: 3,
            ..Default::default()
        };
        let d = synth_gbdt(&p, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &schema(Task::Regression, &[])).unwrap();
        assert_eq!(back.x_num, d.x_num);
        assert_eq!(back.y, d.y);
    }

    #[test]
    fn guarded_counts_reads() {
        let g = Guarded::new(vec![1, 2]);
        assert_eq!(g.reads(), 0);
        assert_eq!(g.read().len(), 2);
        assert_eq!(g.reads(), 1);
    }
}
