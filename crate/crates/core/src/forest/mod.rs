//! Random-forest baseline: bootstrap-bagged CART trees split on Gini
//! impurity, predicting by averaging leaf class distributions.

mod file;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contexts::derive_seed;
use crate::dataset::SeriesDataset;
use crate::error::{Error, Result};

pub use file::FOREST_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hit `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(f))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            max_features: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 || self.max_features == Some(0) {
            return Err(Error::Config(
                "forest needs n_trees, min_leaf and max_features >= 1".into(),
            ));
        }
        Ok(())
    }

    fn features_per_split(&self, f: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| ((f as f64).sqrt().round() as usize).max(1))
            .min(f)
    }
}

pub(crate) const LEAF: u32 = u32::MAX;

/// One tree as flat node arrays. Node 0 is the root. For a split node,
/// rows with `x[feature] <= threshold` go left. Leaves index into
/// `counts`, `k` entries per leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Leaf slot for leaves, unused for split nodes.
    pub leaf: Vec<u32>,
    pub counts: Vec<u32>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.feature[n] == LEAF {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        go(self, 0)
    }

    fn leaf_for(&self, row: &[f32]) -> usize {
        let mut n = 0;
        while self.feature[n] != LEAF {
            let x = f64::from(row[self.feature[n] as usize]);
            n = if x <= self.threshold[n] {
                self.left[n]
            } else {
                self.right[n]
            } as usize;
        }
        self.leaf[n] as usize
    }

    /// Class counts of the leaf reached by `row`.
    pub fn leaf_counts(&self, row: &[f32], k: usize) -> &[u32] {
        let slot = self.leaf_for(row);
        &self.counts[slot * k..(slot + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub f: usize,
    pub k: usize,
    pub trees: Vec<Tree>,
}

/// Gini impurity `1 - sum p_c^2` of a count vector.
pub fn gini(counts: &[u32]) -> f64 {
    let n: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Best split of `rows` on one feature by sweeping sorted values and
/// moving one row at a time from right to left. Returns
/// `(weighted child impurity, threshold)`.
pub fn best_split_on_feature(
    values: &[f32],
    labels: &[u32],
    k: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 * min_leaf {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut right = vec![0u64; k];
    for &l in labels {
        right[l as usize] += 1;
    }
    let mut left = vec![0u64; k];
    // sums of squared counts, updated in O(1) per move
    let mut sq_left = 0u64;
    let mut sq_right: u64 = right.iter().map(|c| c * c).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let c = labels[order[i]] as usize;
        sq_left += 2 * left[c] + 1;
        left[c] += 1;
        sq_right -= 2 * right[c] - 1;
        right[c] -= 1;
        let (nl, nr) = (i + 1, n - i - 1);
        let (lo, hi) = (values[order[i]], values[order[i + 1]]);
        if nl < min_leaf || nr < min_leaf || lo == hi {
            continue;
        }
        let (nlf, nrf) = (nl as f64, nr as f64);
        let impurity = (nlf - sq_left as f64 / nlf + nrf - sq_right as f64 / nrf) / n as f64;
        if best.is_none_or(|(b, _)| impurity < b) {
            let mut threshold = (f64::from(lo) + f64::from(hi)) / 2.0;
            if threshold >= f64::from(hi) {
                threshold = f64::from(lo);
            }
            best = Some((impurity, threshold));
        }
    }
    best
}

/// Row-major feature matrix borrowed from a dataset or built by hand.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub data: &'a [f32],
    pub f: usize,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a [f32], f: usize) -> Result<Self> {
        if f == 0 || !data.len().is_multiple_of(f) {
            return Err(Error::ShapeMismatch {
                expected: format!("a multiple of {f} values"),
                got: data.len().to_string(),
            });
        }
        Ok(Rows { data, f })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.f
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.f..(i + 1) * self.f]
    }

    /// Rows of a dataset; windows are flattened to `l * f` features.
    pub fn of_dataset(ds: &'a SeriesDataset) -> Self {
        Rows {
            data: &ds.data,
            f: ds.l * ds.f,
        }
    }
}

struct Builder<'a> {
    rows: Rows<'a>,
    labels: &'a [u32],
    k: usize,
    config: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    tree: Tree,
    values: Vec<f32>,
    node_labels: Vec<u32>,
}

impl Builder<'_> {
    fn make_leaf(&mut self, idx: &[usize]) -> u32 {
        let slot = self.tree.counts.len() / self.k;
        let mut counts = vec![0u32; self.k];
        for &i in idx {
            counts[self.labels[i] as usize] += 1;
        }
        self.tree.counts.extend_from_slice(&counts);
        self.push_node(LEAF, 0.0, slot as u32)
    }

    fn push_node(&mut self, feature: u32, threshold: f64, leaf: u32) -> u32 {
        let id = self.tree.feature.len() as u32;
        self.tree.feature.push(feature);
        self.tree.threshold.push(threshold);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree.leaf.push(leaf);
        id
    }

    fn split_on(&mut self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        self.values.clear();
        self.node_labels.clear();
        for &i in idx {
            self.values.push(self.rows.row(i)[feature]);
            self.node_labels.push(self.labels[i]);
        }
        best_split_on_feature(
            &self.values,
            &self.node_labels,
            self.k,
            self.config.min_leaf,
        )
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let first = self.labels[idx[0]];
        let pure = idx.iter().all(|&i| self.labels[i] == first);
        let depth_done = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_done || idx.len() < 2 * self.config.min_leaf {
            return self.make_leaf(idx);
        }
        let f = self.rows.f;
        let candidates: Vec<usize> = sample(&mut self.rng, f, f).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        // Keep drawing features past mtry only while no valid split exists.
        for (tried, &feature) in candidates.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.split_on(idx, feature) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, feature, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.make_leaf(idx);
        };
        let rows = self.rows;
        let mut mid = 0;
        for j in 0..idx.len() {
            if f64::from(rows.row(idx[j])[feature]) <= threshold {
                idx.swap(j, mid);
                mid += 1;
            }
        }
        let node = self.push_node(feature as u32, threshold, 0);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.tree.left[node as usize] = left;
        self.tree.right[node as usize] = right;
        node
    }
}

/// Bootstrap resample: `n` indices drawn uniformly with replacement.
pub fn bootstrap(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn fit_tree(rows: Rows<'_>, labels: &[u32], k: usize, config: &ForestConfig, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = bootstrap(rows.len(), &mut rng);
    let mut b = Builder {
        rows,
        labels,
        k,
        config,
        mtry: config.features_per_split(rows.f),
        rng,
        tree: Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            leaf: Vec::new(),
            counts: Vec::new(),
        },
        values: Vec::new(),
        node_labels: Vec::new(),
    };
    b.grow(&mut idx, 0);
    b.tree
}

/// Fits `config.n_trees` trees on bootstrap resamples. Tree `t` uses a
/// seed derived from `(config.seed, t)`, so the first `m` trees of a
/// larger forest equal an `m`-tree forest with the same seed.
pub fn fit(config: &ForestConfig, rows: Rows<'_>, labels: &[u32], k: usize) -> Result<ForestModel> {
    config.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", rows.len()),
            got: labels.len().to_string(),
        });
    }
    if rows.is_empty() {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let first = rows.row(0);
    let conflicting = labels.iter().any(|&l| l != labels[0]);
    if conflicting && (1..rows.len()).all(|i| rows.row(i) == first) {
        return Err(Error::DegenerateData(
            "all rows are identical but labels differ".into(),
        ));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(rows, labels, k, config, derive_seed(config.seed, t as u64)))
        .collect();
    Ok(ForestModel {
        f: rows.f,
        k,
        trees,
    })
}

/// Fits on a dataset, flattening each window into one row.
pub fn fit_dataset(config: &ForestConfig, ds: &SeriesDataset) -> Result<ForestModel> {
    fit(config, Rows::of_dataset(ds), &ds.labels, ds.n_classes)
}

impl ForestModel {
    /// Forest made of the first `n` trees.
    pub fn truncated(&self, n: usize) -> ForestModel {
        ForestModel {
            f: self.f,
            k: self.k,
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
        }
    }

    /// Mean of the normalized leaf distributions over all trees.
    pub fn predict_proba(&self, rows: Rows<'_>) -> Result<Vec<Vec<f64>>> {
        if rows.f != self.f {
            return Err(Error::ShapeMismatch {
                expected: format!("rows of {} features", self.f),
                got: format!("{}", rows.f),
            });
        }
        let n_trees = self.trees.len() as f64;
        Ok((0..rows.len())
            .into_par_iter()
            .map(|i| {
                let row = rows.row(i);
                let mut acc = vec![0.0; self.k];
                for tree in &self.trees {
                    let counts = tree.leaf_counts(row, self.k);
                    let total: u32 = counts.iter().sum();
                    for (a, &c) in acc.iter_mut().zip(counts) {
                        *a += f64::from(c) / f64::from(total);
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n_trees);
                acc
            })
            .collect())
    }

    /// Argmax of [`ForestModel::predict_proba`]; ties go to the lowest index.
    pub fn predict(&self, rows: Rows<'_>) -> Result<Vec<u32>> {
        Ok(self
            .predict_proba(rows)?
            .iter()
            .map(|p| {
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect())
    }

    pub fn predict_dataset(&self, ds: &SeriesDataset) -> Result<Vec<u32>> {
        self.predict(Rows::of_dataset(ds))
    }

    pub fn accuracy(&self, ds: &SeriesDataset) -> Result<f64> {
        let pred = self.predict_dataset(ds)?;
        let hits = pred.iter().zip(&ds.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / ds.len().max(1) as f64)
    }
}
