//! Experiment orchestration: data preparation, grid search with a
//! single-use test split, metrics, timing and reports.

mod report;
mod suite;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contexts::{derive_seed, ContextRegistry, FaultMagnitudes};
use crate::dataset::{
    extract_features, normalize, split_consecutive, window_all, NormStats, SeriesDataset,
    SplitRatios, SplitSet,
};
use crate::error::{Error, Result};
use crate::hydro::VehicleParams;
use crate::nnet::TrainConfig;
use crate::simgen::{
    add_noise, simulate_contexts, ExcitationConfig, NoiseSigmas, RawTrajectory, SimConfig,
};

pub use report::{
    accuracy_table, fit_line, history_csv, metrics, series_length_csv, timing_csv, timing_report,
    Confusion, LineFit, TimingRow,
};
pub use suite::{
    run_suite, timing_scaling, train_forest_grid, train_network, EvalReport, GridCell, Hyper,
    SuiteReport, TestVault,
};

/// Duration per context at full scale, seconds.
pub const FULL_SCALE_DURATION: f64 = 40_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Lstm,
    LightLstm,
    Mlp,
    #[serde(rename = "rf")]
    Forest,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Lstm => "lstm",
            ClassifierKind::LightLstm => "light-lstm",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Forest => "rf",
        }
    }

    pub fn architecture(self) -> Option<crate::nnet::Architecture> {
        use crate::nnet::Architecture;
        match self {
            ClassifierKind::Lstm => Some(Architecture::Lstm),
            ClassifierKind::LightLstm => Some(Architecture::LightLstm),
            ClassifierKind::Mlp => Some(Architecture::Mlp),
            ClassifierKind::Forest => None,
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, ClassifierKind::Lstm | ClassifierKind::LightLstm)
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ClassifierKind::Lstm),
            "light-lstm" | "light_lstm" => Ok(ClassifierKind::LightLstm),
            "mlp" => Ok(ClassifierKind::Mlp),
            "rf" | "forest" => Ok(ClassifierKind::Forest),
            other => Err(Error::Config(format!("unknown classifier {other:?}"))),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub classes: usize,
    pub seed: u64,
    /// Seconds simulated per context.
    pub duration: f64,
    pub noise: bool,
    pub sigmas: NoiseSigmas,
    pub series_lengths: Vec<usize>,
    /// Step between consecutive windows of the recurrent datasets.
    pub stride: usize,
    pub classifiers: Vec<ClassifierKind>,
    pub train: TrainConfig,
    pub forest_trees: Vec<usize>,
    /// Maximum tree depths; 0 means unbounded.
    pub forest_depths: Vec<usize>,
    /// Training-set fractions for the timing-scaling fit; empty disables it.
    pub timing_fractions: Vec<f64>,
    pub timing_epochs: usize,
    pub ratios: SplitRatios,
    pub excitation: ExcitationConfig,
    pub simulation: SimConfig,
    pub faults: FaultMagnitudes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "d3".into(),
            classes: 3,
            seed: 1,
            duration: 8_000.0,
            noise: false,
            sigmas: NoiseSigmas::default(),
            series_lengths: vec![10, 20, 40, 60, 80, 100],
            stride: 10,
            classifiers: vec![
                ClassifierKind::LightLstm,
                ClassifierKind::Mlp,
                ClassifierKind::Forest,
            ],
            train: TrainConfig::default(),
            forest_trees: vec![20, 50, 100],
            forest_depths: vec![8, 16, 0],
            timing_fractions: vec![0.25, 0.5, 0.75, 1.0],
            timing_epochs: 2,
            ratios: SplitRatios::default(),
            excitation: ExcitationConfig::default(),
            simulation: SimConfig::default(),
            faults: FaultMagnitudes::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("experiment {:?}: {msg}", self.name)));
        if self.classes < 2 {
            return bad(format!("needs >= 2 classes, got {}", self.classes));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if self.series_lengths.is_empty() || self.series_lengths.contains(&0) {
            return bad("series lengths must be non-empty and >= 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.classifiers.is_empty() {
            return bad("no classifiers selected".into());
        }
        let unique: BTreeSet<_> = self.classifiers.iter().collect();
        if unique.len() != self.classifiers.len() {
            return bad("classifiers listed twice".into());
        }
        if self.classifiers.contains(&ClassifierKind::Forest)
            && (self.forest_trees.is_empty() || self.forest_trees.contains(&0))
        {
            return bad("forest tree counts must be non-empty and >= 1".into());
        }
        if self.classifiers.contains(&ClassifierKind::Forest) && self.forest_depths.is_empty() {
            return bad("forest depths must be non-empty".into());
        }
        if self
            .timing_fractions
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return bad("timing fractions must lie in (0, 1]".into());
        }
        if !self.timing_fractions.is_empty() && self.timing_epochs == 0 {
            return bad("timing_epochs must be >= 1".into());
        }
        self.train.validate()
    }

    /// Switches to the full-scale duration.
    pub fn full_scale(mut self) -> Self {
        self.duration = FULL_SCALE_DURATION;
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::binio::read_text(path)?;
        Self::parse(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the rendered config: identifies the data a model saw.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.render().as_bytes()).into()
    }

    fn seed_for(&self, purpose: u64) -> u64 {
        derive_seed(self.seed, purpose)
    }
}

/// Simulated, split and normalized data of one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub registry: ContextRegistry,
    pub trajectories: Vec<RawTrajectory>,
    /// Normalized feature rows, split per class.
    pub splits: SplitSet,
    pub stats: NormStats,
    pub digest: [u8; 32],
}

impl PreparedData {
    /// `[train, val, test]` windows of length `l`.
    pub fn windows(&self, l: usize, stride: usize) -> Result<[SeriesDataset; 3]> {
        let mut hasher = Sha256::new();
        hasher.update(self.digest);
        hasher.update((l as u64).to_le_bytes());
        hasher.update((stride as u64).to_le_bytes());
        window_all(
            &self.splits,
            Some(&self.stats),
            l,
            stride,
            hasher.finalize().into(),
        )
    }

    /// `[train, val, test]` rows for the flat classifiers.
    pub fn flat(&self) -> Result<[SeriesDataset; 3]> {
        self.windows(1, 1)
    }
}

/// Builds the registry, simulates every context, adds noise if enabled,
/// splits per class and normalizes with train statistics.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    config.validate()?;
    let registry = ContextRegistry::build_with(config.classes, config.seed, config.faults)?;
    let nominal = VehicleParams::nominal();
    let contexts: Vec<(u32, VehicleParams)> = registry
        .materialize_all(&nominal)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i as u32, p))
        .collect();
    let sim = SimConfig {
        duration: config.duration,
        ..config.simulation
    };
    let mut trajectories =
        simulate_contexts(&contexts, &config.excitation, &sim, config.seed_for(1))?;
    if config.noise {
        let seed = config.seed_for(2);
        trajectories = trajectories
            .iter()
            .map(|t| add_noise(t, &config.sigmas, seed))
            .collect::<Result<_>>()?;
    }
    let series: Vec<_> = trajectories.iter().map(extract_features).collect();
    let splits = split_consecutive(&series, config.ratios)?;
    let (splits, stats) = normalize(&splits)?;
    Ok(PreparedData {
        registry,
        trajectories,
        splits,
        stats,
        digest: config.digest(),
    })
}
