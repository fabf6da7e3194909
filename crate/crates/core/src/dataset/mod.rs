//! Feature extraction, stratified consecutive splits, normalization and
//! sliding windows.
//!
//! The pipeline is split, then normalize (statistics from the training
//! split only), then window. Windows never cross a split or class boundary.

mod file;

pub use file::DATASET_VERSION;
pub(crate) use file::{read_stats, write_stats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simgen::RawTrajectory;

/// Body DOFs that enter the feature vector: surge, sway, yaw.
pub const PLANAR_DOFS: [usize; 3] = [0, 1, 5];

/// Standard deviations at or below this pass through unscaled.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Minimum samples per class for a split.
pub const MIN_CLASS_SAMPLES: usize = 10;

pub fn feature_names(n_thrusters: usize) -> Vec<String> {
    let mut names: Vec<String> = ["du", "dv", "dr", "u", "v", "r"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((1..=n_thrusters).map(|j| format!("n{j}")));
    names
}

/// Consecutive feature rows of one class, `rows.len() == len() * f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSeries {
    pub label: u32,
    /// Sample index of the first row within the class trajectory.
    pub start: u64,
    pub f: usize,
    pub rows: Vec<f64>,
}

impl ClassSeries {
    pub fn len(&self) -> usize {
        self.rows.len().checked_div(self.f).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.f..(i + 1) * self.f]
    }

    fn slice(&self, from: usize, to: usize) -> ClassSeries {
        ClassSeries {
            label: self.label,
            start: self.start + from as u64,
            f: self.f,
            rows: self.rows[from * self.f..to * self.f].to_vec(),
        }
    }
}

/// Feature rows `[du, dv, dr, u, v, r, n1..nm]` of a trajectory.
pub fn extract_features(traj: &RawTrajectory) -> ClassSeries {
    let f = 6 + traj.n_thrusters();
    let mut rows = Vec::with_capacity(traj.len() * f);
    for r in &traj.rows {
        rows.extend(PLANAR_DOFS.iter().map(|&i| r.nu_dot[i]));
        rows.extend(PLANAR_DOFS.iter().map(|&i| r.nu[i]));
        rows.extend(&r.command);
    }
    ClassSeries {
        label: traj.label,
        start: 0,
        f,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u32 {
        self as u32
    }

    fn from_tag(tag: u32) -> Option<Split> {
        Split::ALL.get(tag as usize).copied()
    }
}

/// Split proportions in percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 60,
            val: 20,
            test: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub f: usize,
    pub n_classes: usize,
    pub train: Vec<ClassSeries>,
    pub val: Vec<ClassSeries>,
    pub test: Vec<ClassSeries>,
}

impl SplitSet {
    pub fn part(&self, split: Split) -> &[ClassSeries] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn part_mut(&mut self, split: Split) -> &mut Vec<ClassSeries> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Per class: first `train`% of the samples for training, the next `val`%
/// for validation, the remainder for testing. Order is preserved.
pub fn split_consecutive(series: &[ClassSeries], ratios: SplitRatios) -> Result<SplitSet> {
    if ratios.train + ratios.val + ratios.test != 100 || ratios.train == 0 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must sum to 100"
        )));
    }
    let f = series.first().map_or(0, |s| s.f);
    if series.iter().any(|s| s.f != f) {
        return Err(Error::ShapeMismatch {
            expected: format!("{f} features"),
            got: "mixed feature widths".into(),
        });
    }
    let mut labels: Vec<u32> = series.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate class label in series".into()));
    }
    let n_classes = labels.last().map_or(0, |l| *l as usize + 1);
    let mut set = SplitSet {
        f,
        n_classes,
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for s in series {
        let len = s.len();
        if len < MIN_CLASS_SAMPLES {
            return Err(Error::TooFewSamples {
                label: s.label,
                len,
                min: MIN_CLASS_SAMPLES,
            });
        }
        let n_train = len * ratios.train as usize / 100;
        let n_val = len * ratios.val as usize / 100;
        set.train.push(s.slice(0, n_train));
        set.val.push(s.slice(n_train, n_train + n_val));
        set.test.push(s.slice(n_train + n_val, len));
    }
    Ok(set)
}

/// Per-feature standardization statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose spread was too small to scale; they pass through.
    pub degenerate: Vec<bool>,
}

impl NormStats {
    pub fn from_series(series: &[ClassSeries]) -> Result<Self> {
        let f = series.first().map_or(0, |s| s.f);
        let n: usize = series.iter().map(ClassSeries::len).sum();
        if n == 0 || f == 0 {
            return Err(Error::DegenerateData("training split is empty".into()));
        }
        let mut mean = vec![0.0; f];
        for s in series {
            for row in s.rows.chunks_exact(f) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for s in series {
            for row in s.rows.chunks_exact(f) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let degenerate = std.iter().map(|s| !(*s > DEGENERATE_STD)).collect();
        Ok(NormStats {
            mean,
            std,
            degenerate,
        })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            let k = i % self.mean.len();
            if !self.degenerate[k] {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

/// Standardizes every split with statistics from the training split.
pub fn normalize(set: &SplitSet) -> Result<(SplitSet, NormStats)> {
    let stats = NormStats::from_series(&set.train)?;
    let mut out = set.clone();
    for split in Split::ALL {
        for s in out.part_mut(split) {
            stats.apply(&mut s.rows);
        }
    }
    Ok((out, stats))
}

/// Windowed tensor of shape `(n, l, f)` stored row-major in `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub split: Split,
    pub n_classes: usize,
    pub l: usize,
    pub f: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u32>,
    /// Sample index of each window's first row within its class trajectory.
    pub starts: Vec<u64>,
    pub stats: Option<NormStats>,
    pub provenance: [u8; 32],
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.l * self.f;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Consistency of sizes, labels and values.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let expect = n.checked_mul(self.l).and_then(|x| x.checked_mul(self.f));
        if expect != Some(self.data.len()) || self.starts.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("({n}, {}, {})", self.l, self.f),
                got: format!("{} values, {} starts", self.data.len(), self.starts.len()),
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= self.n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.n_classes,
            });
        }
        if let Some(stats) = &self.stats {
            if stats.mean.len() != self.f
                || stats.std.len() != self.f
                || stats.degenerate.len() != self.f
            {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} normalization entries", self.f),
                    got: format!("{}", stats.mean.len()),
                });
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset tensor"));
        }
        Ok(())
    }
}

/// Sliding windows of length `l` every `stride` samples inside each class
/// segment of one split.
pub fn window(
    series: &[ClassSeries],
    split: Split,
    n_classes: usize,
    l: usize,
    stride: usize,
) -> Result<SeriesDataset> {
    if l == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window length {l} and stride {stride} must be >= 1"
        )));
    }
    let f = series.first().map_or(0, |s| s.f);
    let mut ds = SeriesDataset {
        split,
        n_classes,
        l,
        f,
        data: Vec::new(),
        labels: Vec::new(),
        starts: Vec::new(),
        stats: None,
        provenance: [0; 32],
    };
    for s in series {
        let len = s.len();
        if len < l {
            return Err(Error::WindowTooLong { window: l, len });
        }
        if s.label as usize >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: n_classes,
            });
        }
        let count = (len - l) / stride + 1;
        ds.data.reserve(count * l * f);
        for w in 0..count {
            let from = w * stride;
            ds.data
                .extend(s.rows[from * f..(from + l) * f].iter().map(|&v| v as f32));
            ds.labels.push(s.label);
            ds.starts.push(s.start + from as u64);
        }
    }
    Ok(ds)
}

/// Reshapes `(n, l, f)` into `(n * l, f)` rows, stored as windows of
/// length one; labels repeat per row.
pub fn flatten(ds: &SeriesDataset) -> SeriesDataset {
    let labels = ds
        .labels
        .iter()
        .flat_map(|&lab| std::iter::repeat_n(lab, ds.l))
        .collect();
    let starts = ds
        .starts
        .iter()
        .flat_map(|&s| (0..ds.l as u64).map(move |k| s + k))
        .collect();
    SeriesDataset {
        split: ds.split,
        n_classes: ds.n_classes,
        l: 1,
        f: ds.f,
        data: ds.data.clone(),
        labels,
        starts,
        stats: ds.stats.clone(),
        provenance: ds.provenance,
    }
}

/// Windows every split of `set` with the same geometry.
pub fn window_all(
    set: &SplitSet,
    stats: Option<&NormStats>,
    l: usize,
    stride: usize,
    provenance: [u8; 32],
) -> Result<[SeriesDataset; 3]> {
    let build = |split: Split| -> Result<SeriesDataset> {
        let mut ds = window(set.part(split), split, set.n_classes, l, stride)?;
        ds.stats = stats.cloned();
        ds.provenance = provenance;
        Ok(ds)
    };
    Ok([
        build(Split::Train)?,
        build(Split::Val)?,
        build(Split::Test)?,
    ])
}

#[cfg(test)]
mod tests;
