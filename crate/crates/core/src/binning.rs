//! Per-feature bin construction.
//!
//! Two constructors are provided: [`quantile_bins`] (unsupervised, uniformly spaced empirical
//! quantiles) and [`target_aware_bins`] (leaves of a single-feature decision tree grown greedily
//! against the labels). Both return a [`BinLayout`] whose boundaries are strictly increasing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Task;

/// Boundaries `b_0 < b_1 < ... < b_T` of the `T` half-open bins `[b_{t-1}, b_t)` of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub feature_index: usize,
    boundaries: Vec<f64>,
}

impl BinLayout {
    pub fn new(feature_index: usize, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::degenerate(
                feature_index,
                format!("{} boundaries, at least 2 are required", boundaries.len()),
            ));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feature {feature_index}: bin boundaries must be finite"
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "feature {feature_index}: bin boundaries must be strictly increasing"
            )));
        }
        Ok(Self {
            feature_index,
            boundaries,
        })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of bins `T`.
    pub fn n_bins(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Zero-based index of the bin containing `x`; values outside `[b_0, b_T)` are assigned to
    /// the first or last bin.
    pub fn bin_index(&self, x: f64) -> usize {
        let inner = &self.boundaries[1..self.boundaries.len() - 1];
        inner.partition_point(|&b| b <= x)
    }

    /// Applies `x -> a * x + b` to every boundary. `a` must be positive.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument("affine scale must be positive".into()));
        }
        Self::new(self.feature_index, self.boundaries.iter().map(|&v| a * v + b).collect())
    }
}

/// Linear-interpolation empirical quantile at the exact rational level `num / den`.
///
/// The level maps to position `num * (n - 1) / den` in `sorted`, computed in integers so that
/// levels such as `0`, `1/2` and `1` land exactly on order statistics.
pub(crate) fn quantile_rational(sorted: &[f64], num: usize, den: usize) -> f64 {
    debug_assert!(!sorted.is_empty() && den > 0 && num <= den);
    let scaled = num as u128 * (sorted.len() as u128 - 1);
    let lo = (scaled / den as u128) as usize;
    let rem = (scaled % den as u128) as f64;
    if rem == 0.0 {
        return sorted[lo];
    }
    let frac = rem / den as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

pub(crate) fn sorted_finite(values: &[f64], feature: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "feature {feature}: cannot bin an empty sample"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "feature {feature}: sample contains non-finite values"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Bins at the empirical quantiles `t / t_max`, `t = 0..=t_max`, with zero-width bins removed.
pub fn quantile_bins(feature_index: usize, values: &[f64], t_max: usize) -> Result<BinLayout> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    let sorted = sorted_finite(values, feature_index)?;
    let mut boundaries: Vec<f64> = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let b = quantile_rational(&sorted, t, t_max);
        if boundaries.last().is_none_or(|&last| b > last) {
            boundaries.push(b);
        }
    }
    if boundaries.len() < 2 {
        return Err(Error::degenerate(feature_index, "constant feature"));
    }
    BinLayout::new(feature_index, boundaries)
}

/// Stopping rules for [`target_aware_bins`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeBinning {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub min_info_gain: f64,
}

impl Default for TreeBinning {
    fn default() -> Self {
        Self {
            max_leaves: 32,
            min_samples_leaf: 1,
            min_info_gain: 0.0,
        }
    }
}

// Gains closer than this (relative) are considered equal; the earlier candidate wins.
const GAIN_TIE_RTOL: f64 = 1e-9;

pub(crate) fn gain_beats(candidate: f64, incumbent: f64) -> bool {
    candidate - incumbent > GAIN_TIE_RTOL * candidate.abs().max(incumbent.abs())
}

#[derive(Clone, Copy, Debug)]
struct Split {
    gain: f64,
    // first index of the right child in the sorted sample
    pos: usize,
}

#[derive(Debug)]
struct Leaf {
    start: usize,
    end: usize,
    best: Option<Split>,
}

/// Bins from the leaves of a single-feature decision tree grown best-first against `targets`.
///
/// Regression uses variance reduction, classification uses entropy information gain (targets
/// hold class indices). Interior boundaries are the split thresholds, placed at midpoints between
/// consecutive distinct values; the outer boundaries are the sample minimum and maximum.
pub fn target_aware_bins(
    feature_index: usize,
    values: &[f64],
    targets: &[f64],
    task: Task,
    params: &TreeBinning,
) -> Result<BinLayout> {
    if values.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values vs {} targets",
            values.len(),
            targets.len()
        )));
    }
    if params.max_leaves < 2 || params.min_samples_leaf < 1 {
        return Err(Error::InvalidArgument(
            "max_leaves must be >= 2 and min_samples_leaf >= 1".into(),
        ));
    }
    sorted_finite(values, feature_index)?;
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(targets.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if lo == hi {
        return Err(Error::degenerate(feature_index, "constant feature"));
    }

    let criterion = match task {
        Task::Regression => Criterion::regression(&ys),
        Task::BinClass | Task::MultiClass => Criterion::classification(&ys)?,
    };

    let mut leaves = vec![Leaf {
        start: 0,
        end: xs.len(),
        best: criterion.best_split(&xs, 0, xs.len(), params),
    }];
    while leaves.len() < params.max_leaves {
        let mut chosen: Option<(usize, f64)> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some(split) = leaf.best {
                if chosen.is_none_or(|(_, g)| gain_beats(split.gain, g)) {
                    chosen = Some((i, split.gain));
                }
            }
        }
        let Some((i, _)) = chosen else { break };
        let leaf = leaves.remove(i);
        let split = leaf.best.expect("chosen leaf has a split");
        let right = Leaf {
            start: split.pos,
            end: leaf.end,
            best: criterion.best_split(&xs, split.pos, leaf.end, params),
        };
        let left = Leaf {
            start: leaf.start,
            end: split.pos,
            best: criterion.best_split(&xs, leaf.start, split.pos, params),
        };
        leaves.insert(i, right);
        leaves.insert(i, left);
    }

    let mut boundaries = Vec::with_capacity(leaves.len() + 1);
    boundaries.push(lo);
    for leaf in &leaves[1..] {
        boundaries.push(threshold_between(xs[leaf.start - 1], xs[leaf.start]));
    }
    boundaries.push(hi);
    BinLayout::new(feature_index, boundaries)
}

fn threshold_between(a: f64, b: f64) -> f64 {
    (a + b) / 2.0
}

enum Criterion {
    Regression {
        // prefix sums of targets; prefix[i] = sum of ys[..i]
        prefix: Vec<f64>,
        ys: Vec<f64>,
    },
    Classification {
        labels: Vec<usize>,
        n_classes: usize,
    },
}

impl Criterion {
    fn regression(ys: &[f64]) -> Self {
        let mut prefix = Vec::with_capacity(ys.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &y in ys {
            acc += y;
            prefix.push(acc);
        }
        Criterion::Regression {
            prefix,
            ys: ys.to_vec(),
        }
    }

    fn classification(ys: &[f64]) -> Result<Self> {
        let mut labels = Vec::with_capacity(ys.len());
        for &y in ys {
            if !(y >= 0.0 && y.fract() == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "classification targets must be class indices, got {y}"
                )));
            }
            labels.push(y as usize);
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Criterion::Classification { labels, n_classes })
    }

    fn best_split(&self, xs: &[f64], start: usize, end: usize, params: &TreeBinning) -> Option<Split> {
        let n = end - start;
        let min_leaf = params.min_samples_leaf;
        if n < 2 * min_leaf {
            return None;
        }
        let mut best: Option<Split> = None;
        let mut consider = |gain: f64, pos: usize| {
            if !(gain > 0.0) || gain < params.min_info_gain {
                return;
            }
            let threshold = threshold_between(xs[pos - 1], xs[pos]);
            if !(xs[pos - 1] < threshold && threshold < xs[pos]) {
                return;
            }
            if best.is_none_or(|b| gain_beats(gain, b.gain)) {
                best = Some(Split { gain, pos });
            }
        };
        match self {
            Criterion::Regression { prefix, ys } => {
                let first = ys[start];
                if ys[start..end].iter().all(|&y| y == first) {
                    return None;
                }
                let total = prefix[end] - prefix[start];
                let nf = n as f64;
                for pos in (start + min_leaf)..=(end - min_leaf) {
                    if xs[pos - 1] == xs[pos] {
                        continue;
                    }
                    let n_left = (pos - start) as f64;
                    let n_right = nf - n_left;
                    let sum_left = prefix[pos] - prefix[start];
                    let diff = sum_left / n_left - (total - sum_left) / n_right;
                    // normalized variance reduction: n_l * n_r / n^2 * (mean_l - mean_r)^2
                    consider(n_left * n_right / (nf * nf) * diff * diff, pos);
                }
            }
            Criterion::Classification { labels, n_classes } => {
                let mut total = vec![0usize; *n_classes];
                for &l in &labels[start..end] {
                    total[l] += 1;
                }
                let parent = entropy(&total, n);
                if parent == 0.0 {
                    return None;
                }
                let mut left = vec![0usize; *n_classes];
                let mut right = total.clone();
                for pos in (start + 1)..end {
                    let l = labels[pos - 1];
                    left[l] += 1;
                    right[l] -= 1;
                    let n_left = pos - start;
                    if n_left < min_leaf || n - n_left < min_leaf || xs[pos - 1] == xs[pos] {
                        continue;
                    }
                    let n_right = n - n_left;
                    let weighted =
                        (n_left as f64 * entropy(&left, n_left) + n_right as f64 * entropy(&right, n_right)) / n as f64;
                    consider(parent - weighted, pos);
                }
            }
        }
        best
    }
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .sum()
}

#[derive(Serialize, Deserialize)]
struct LayoutFile {
    features: Vec<BinLayout>,
}

/// Writes layouts as JSON, one record per feature. Floats use shortest round-trip notation.
pub fn save_layouts(path: &Path, layouts: &[BinLayout]) -> Result<()> {
    let text = layouts_to_string(layouts)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_layouts(path: &Path) -> Result<Vec<BinLayout>> {
    layouts_from_str(&fs::read_to_string(path)?)
}

pub fn layouts_to_string(layouts: &[BinLayout]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&LayoutFile {
        features: layouts.to_vec(),
    })?)
}

pub fn layouts_from_str(text: &str) -> Result<Vec<BinLayout>> {
    let file: LayoutFile = serde_json::from_str(text)?;
    // re-validate: the file may have been edited by hand
    file.features
        .into_iter()
        .map(|l| BinLayout::new(l.feature_index, l.boundaries))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantiles_of_0_to_100() {
        let values: Vec<f64> = (0..=100).map(f64::from).collect();
        let bins = quantile_bins(0, &values, 4).unwrap();
        // sort-based oracle: position q * (n - 1) in the sorted sample
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let oracle: Vec<f64> = (0..=4)
            .map(|t| {
                let pos = t as f64 / 4.0 * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
            })
            .collect();
        assert_eq!(bins.boundaries(), oracle.as_slice());
        assert_eq!(bins.boundaries(), &[0.0, 25.0, 50.0, 75.0, 100.0]);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let err = quantile_bins(3, &[5.0; 10], 8).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature { feature: 3, .. }));
        let err = target_aware_bins(3, &[5.0; 10], &[1.0; 10], Task::Regression, &TreeBinning::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature { .. }));
    }

    #[test]
    fn single_quantile_bin_spans_range() {
        let bins = quantile_bins(0, &[3.0, -2.0, 7.5, 0.1], 1).unwrap();
        assert_eq!(bins.boundaries(), &[-2.0, 7.5]);
    }

    #[test]
    fn duplicate_quantiles_collapse() {
        let values = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
        let bins = quantile_bins(0, &values, 8).unwrap();
        assert!(bins.boundaries().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(bins.boundaries()[0], 0.0);
        assert_eq!(*bins.boundaries().last().unwrap(), 2.0);
    }

    #[test]
    fn tree_bins_classification_example() {
        let bins = target_aware_bins(
            0,
            &[1.0, 2.0, 3.0, 4.0],
            &[0.0, 0.0, 1.0, 1.0],
            Task::BinClass,
            &TreeBinning {
                max_leaves: 2,
                min_samples_leaf: 1,
                min_info_gain: 0.0,
            },
        )
        .unwrap();
        assert_eq!(bins.boundaries(), &[1.0, 2.5, 4.0]);
    }

    #[test]
    fn identical_targets_give_one_bin() {
        let bins = target_aware_bins(
            0,
            &[4.0, 1.0, 3.0, 2.0],
            &[0.3; 4],
            Task::Regression,
            &TreeBinning::default(),
        )
        .unwrap();
        assert_eq!(bins.boundaries(), &[1.0, 4.0]);
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys = [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let params = TreeBinning {
            max_leaves: 8,
            min_samples_leaf: 3,
            min_info_gain: 0.0,
        };
        let bins = target_aware_bins(0, &xs, &ys, Task::BinClass, &params).unwrap();
        // the only informative split (after x = 0) would leave a single sample on the left
        for w in bins.boundaries().windows(2) {
            let count = xs.iter().filter(|&&x| x >= w[0] && x <= w[1]).count();
            assert!(count >= 3, "{:?}", bins.boundaries());
        }
    }

    #[test]
    fn min_info_gain_blocks_weak_splits() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0, 0.0, 1.0, 1.0];
        let params = TreeBinning {
            max_leaves: 4,
            min_samples_leaf: 1,
            min_info_gain: 2.0_f64.ln() + 1e-6,
        };
        let bins = target_aware_bins(0, &xs, &ys, Task::BinClass, &params).unwrap();
        assert_eq!(bins.n_bins(), 1);
    }

    #[test]
    fn bin_index_clamps() {
        let bins = BinLayout::new(0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bins.bin_index(-5.0), 0);
        assert_eq!(bins.bin_index(0.0), 0);
        assert_eq!(bins.bin_index(1.0), 1);
        assert_eq!(bins.bin_index(2.999), 2);
        assert_eq!(bins.bin_index(3.0), 2);
        assert_eq!(bins.bin_index(9.0), 2);
    }

    #[test]
    fn layout_validation() {
        assert!(BinLayout::new(0, vec![1.0]).is_err());
        assert!(BinLayout::new(0, vec![1.0, 1.0]).is_err());
        assert!(BinLayout::new(0, vec![2.0, 1.0]).is_err());
        assert!(BinLayout::new(0, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn layouts_round_trip_bit_exactly() {
        let layouts = vec![
            BinLayout::new(0, vec![0.1, 0.2 + 0.1, 1.0 / 3.0]).unwrap(),
            BinLayout::new(4, vec![-1e-300, 5e-324, 1.7976931348623157e308]).unwrap(),
        ];
        let text = layouts_to_string(&layouts).unwrap();
        let back = layouts_from_str(&text).unwrap();
        for (a, b) in layouts.iter().zip(&back) {
            assert_eq!(a.feature_index, b.feature_index);
            for (x, y) in a.boundaries().iter().zip(b.boundaries()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rational_quantile_hits_order_statistics() {
        let sorted = [1.0, 2.0, 4.0, 8.0, 16.0];
        assert_eq!(quantile_rational(&sorted, 0, 7), 1.0);
        assert_eq!(quantile_rational(&sorted, 1, 2), 4.0);
        assert_eq!(quantile_rational(&sorted, 7, 7), 16.0);
        assert_abs_diff_eq!(quantile_rational(&sorted, 1, 8), 1.5, epsilon = 1e-15);
    }
}
