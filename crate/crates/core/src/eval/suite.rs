use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{fit_line, metrics, Confusion, LineFit, TimingRow};
use super::{prepare_data, ClassifierKind, ExperimentConfig, PreparedData};
use crate::contexts::derive_seed;
use crate::dataset::SeriesDataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig, ForestModel};
use crate::nnet::{self, ClassifierModel, EpochRecord, Network, TrainConfig};

/// Hands out each classifier's test split exactly once.
#[derive(Debug, Default)]
pub struct TestVault {
    opened: BTreeSet<String>,
}

impl TestVault {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &mut self,
        key: &str,
        data: &PreparedData,
        l: usize,
        stride: usize,
    ) -> Result<SeriesDataset> {
        if !self.opened.insert(key.to_string()) {
            return Err(Error::TestSplitReused(key.to_string()));
        }
        let [_, _, test] = data.windows(l, stride)?;
        Ok(test)
    }

    pub fn accesses(&self) -> usize {
        self.opened.len()
    }
}

/// Hyperparameters of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hyper {
    pub series_length: Option<usize>,
    pub n_trees: Option<usize>,
    /// 0 means unbounded.
    pub max_depth: Option<usize>,
}

impl std::fmt::Display for Hyper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if let Some(l) = self.series_length {
            parts.push(format!("l={l}"));
        }
        if let Some(t) = self.n_trees {
            parts.push(format!("trees={t}"));
        }
        match self.max_depth {
            Some(0) => parts.push("depth=none".into()),
            Some(d) => parts.push(format!("depth={d}")),
            None => {}
        }
        if parts.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&parts.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hyper: Hyper,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_seconds: f64,
    pub epochs: usize,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: ClassifierKind,
    pub best: Hyper,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub confusion: Confusion,
    pub train_seconds: f64,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub grid: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub classes: usize,
    pub noise: bool,
    pub seed: u64,
    pub duration: f64,
    pub reports: Vec<EvalReport>,
    pub timing: Vec<TimingRow>,
    pub timing_fit: Option<LineFit>,
    pub test_accesses: usize,
}

impl SuiteReport {
    pub fn report(&self, kind: ClassifierKind) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.classifier == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("suite report", e.to_string()))
    }
}

/// Trains one network preset on prepared windows.
pub fn train_network(
    kind: ClassifierKind,
    train: &SeriesDataset,
    val: &SeriesDataset,
    config: &TrainConfig,
) -> Result<(ClassifierModel, f64)> {
    let arch = kind
        .architecture()
        .ok_or_else(|| Error::Config(format!("{} is not a network", kind.name())))?;
    let spec = arch.spec(train.f, train.l, train.n_classes);
    let start = Instant::now();
    let net = Network::new(spec, derive_seed(config.seed, 7))?;
    let model = nnet::train(kind.name(), net, config, train, val)?;
    Ok((model, start.elapsed().as_secs_f64()))
}

/// Fits the largest forest per depth and scores every tree-count prefix
/// on `val`. Returns the grid and the best-scoring forest.
pub fn train_forest_grid(
    trees: &[usize],
    depths: &[usize],
    seed: u64,
    train: &SeriesDataset,
    val: &SeriesDataset,
) -> Result<(Vec<GridCell>, ForestModel)> {
    let max_trees = *trees
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no tree counts".into()))?;
    let mut cells = Vec::new();
    let mut best: Option<(f64, ForestModel)> = None;
    for &depth in depths {
        let config = ForestConfig {
            n_trees: max_trees,
            max_depth: (depth > 0).then_some(depth),
            seed,
            ..ForestConfig::default()
        };
        let start = Instant::now();
        let full = forest::fit_dataset(&config, train)?;
        let fit_seconds = start.elapsed().as_secs_f64();
        for &n in trees {
            let model = full.truncated(n);
            let val_acc = model.accuracy(val)?;
            cells.push(GridCell {
                hyper: Hyper {
                    series_length: None,
                    n_trees: Some(n),
                    max_depth: Some(depth),
                },
                train_acc: model.accuracy(train)?,
                val_acc,
                train_seconds: fit_seconds * n as f64 / max_trees as f64,
                epochs: 0,
                train_size: train.len(),
            });
            if best.as_ref().is_none_or(|(b, _)| val_acc > *b) {
                best = Some((val_acc, model));
            }
        }
    }
    let (_, model) = best.expect("grid is non-empty");
    Ok((cells, model))
}

fn best_cell(cells: &[GridCell]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.val_acc > cells[best].val_acc {
            best = i;
        }
    }
    best
}

fn run_network(
    config: &ExperimentConfig,
    data: &PreparedData,
    vault: &mut TestVault,
    kind: ClassifierKind,
    index: u64,
) -> Result<EvalReport> {
    let lengths: Vec<usize> = if kind.is_temporal() {
        config.series_lengths.clone()
    } else {
        vec![1]
    };
    let stride = if kind.is_temporal() { config.stride } else { 1 };
    let mut cells = Vec::new();
    let mut models = Vec::new();
    for (g, &l) in lengths.iter().enumerate() {
        let [train, val, _] = data.windows(l, stride)?;
        let train_cfg = TrainConfig {
            seed: derive_seed(config.seed, 1000 + 100 * index + g as u64),
            ..config.train.clone()
        };
        let (model, seconds) = train_network(kind, &train, &val, &train_cfg)
            .map_err(|e| e.context(format!("training {} with l = {l}", kind.name())))?;
        cells.push(GridCell {
            hyper: Hyper {
                series_length: kind.is_temporal().then_some(l),
                ..Hyper::default()
            },
            train_acc: model.accuracy(&train)?,
            val_acc: model.accuracy(&val)?,
            train_seconds: seconds,
            epochs: model.history.len(),
            train_size: train.len(),
        });
        models.push((l, model));
    }
    let b = best_cell(&cells);
    let (l, model) = models.swap_remove(b);
    let test = vault.open(kind.name(), data, l, stride)?;
    let (pred, _) = model.predict(&test)?;
    let confusion = metrics(&test.labels, &pred, config.classes)?;
    let cell = &cells[b];
    Ok(EvalReport {
        classifier: kind,
        best: cell.hyper,
        train_acc: cell.train_acc,
        val_acc: cell.val_acc,
        test_acc: confusion.accuracy,
        train_seconds: cell.train_seconds,
        epochs: cell.epochs,
        history: model.history,
        confusion,
        grid: cells,
    })
}

fn run_forest(
    config: &ExperimentConfig,
    data: &PreparedData,
    vault: &mut TestVault,
    index: u64,
) -> Result<EvalReport> {
    let [train, val, _] = data.flat()?;
    let seed = derive_seed(config.seed, 1000 + 100 * index);
    let (cells, model) = train_forest_grid(
        &config.forest_trees,
        &config.forest_depths,
        seed,
        &train,
        &val,
    )
    .map_err(|e| e.context("fitting the random forest"))?;
    let b = best_cell(&cells);
    let test = vault.open(ClassifierKind::Forest.name(), data, 1, 1)?;
    let pred = model.predict_dataset(&test)?;
    let confusion = metrics(&test.labels, &pred, config.classes)?;
    let cell = &cells[b];
    Ok(EvalReport {
        classifier: ClassifierKind::Forest,
        best: cell.hyper,
        train_acc: cell.train_acc,
        val_acc: cell.val_acc,
        test_acc: confusion.accuracy,
        train_seconds: cell.train_seconds,
        epochs: 0,
        history: Vec::new(),
        confusion,
        grid: cells,
    })
}

/// Windows `indices` of `ds`, in order.
fn subset(ds: &SeriesDataset, indices: &[usize]) -> SeriesDataset {
    let mut out = SeriesDataset {
        split: ds.split,
        n_classes: ds.n_classes,
        l: ds.l,
        f: ds.f,
        data: Vec::with_capacity(indices.len() * ds.l * ds.f),
        labels: Vec::with_capacity(indices.len()),
        starts: Vec::with_capacity(indices.len()),
        stats: ds.stats.clone(),
        provenance: ds.provenance,
    };
    for &i in indices {
        out.data.extend_from_slice(ds.window(i));
        out.labels.push(ds.labels[i]);
        out.starts.push(ds.starts[i]);
    }
    out
}

/// Trains `kind` for a fixed number of epochs on growing, evenly spaced
/// subsets of the training windows and records the wall-clock time.
pub fn timing_scaling(
    kind: ClassifierKind,
    train: &SeriesDataset,
    val: &SeriesDataset,
    fractions: &[f64],
    epochs: usize,
    base: &TrainConfig,
    dataset: &str,
) -> Result<(Vec<TimingRow>, Option<LineFit>)> {
    let config = TrainConfig {
        max_epochs: epochs,
        lr_patience: epochs + 1,
        stop_patience: epochs + 1,
        ..base.clone()
    };
    let mut rows = Vec::new();
    for &frac in fractions {
        let m = ((train.len() as f64 * frac).round() as usize).clamp(1, train.len());
        let idx: Vec<usize> = (0..m).map(|j| j * train.len() / m).collect();
        let part = subset(train, &idx);
        let (model, seconds) = train_network(kind, &part, val, &config)?;
        rows.push(TimingRow::new(
            kind.name(),
            dataset,
            part.len(),
            model.history.len(),
            seconds,
        ));
    }
    let fit = (rows.len() >= 2).then(|| {
        let x: Vec<f64> = rows.iter().map(|r| r.train_size as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
        fit_line(&x, &y)
    });
    Ok((rows, fit))
}

/// Runs every configured classifier: grid search on the validation split,
/// then exactly one evaluation of the selected model on the test split.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteReport> {
    let ctx = |e: Error| e.context(format!("experiment {}", config.name));
    let data = prepare_data(config).map_err(ctx)?;
    run_suite_on(config, &data).map_err(ctx)
}

pub(crate) fn run_suite_on(config: &ExperimentConfig, data: &PreparedData) -> Result<SuiteReport> {
    let mut vault = TestVault::new();
    let mut reports = Vec::new();
    let mut timing = Vec::new();
    let label = format!(
        "{}{}",
        config.name,
        if config.noise { "+noise" } else { "" }
    );
    for (i, &kind) in config.classifiers.iter().enumerate() {
        let report = match kind {
            ClassifierKind::Forest => run_forest(config, data, &mut vault, i as u64)?,
            _ => run_network(config, data, &mut vault, kind, i as u64)?,
        };
        let train_size = report
            .grid
            .iter()
            .find(|c| c.hyper == report.best)
            .map_or(0, |c| c.train_size);
        timing.push(TimingRow::new(
            kind.name(),
            &label,
            train_size,
            report.epochs,
            report.train_seconds,
        ));
        reports.push(report);
    }
    let mut timing_fit = None;
    let temporal = reports.iter().find(|r| r.classifier.is_temporal());
    if let (Some(r), false) = (temporal, config.timing_fractions.is_empty()) {
        let l = r.best.series_length.expect("temporal report has a length");
        let [train, val, _] = data.windows(l, config.stride)?;
        let (rows, fit) = timing_scaling(
            r.classifier,
            &train,
            &val,
            &config.timing_fractions,
            config.timing_epochs,
            &TrainConfig {
                seed: derive_seed(config.seed, 3),
                ..config.train.clone()
            },
            &format!("{label}-scaling"),
        )?;
        timing.extend(rows);
        timing_fit = fit;
    }
    Ok(SuiteReport {
        name: config.name.clone(),
        classes: config.classes,
        noise: config.noise,
        seed: config.seed,
        duration: config.duration,
        reports,
        timing,
        timing_fit,
        test_accesses: vault.accesses(),
    })
}
