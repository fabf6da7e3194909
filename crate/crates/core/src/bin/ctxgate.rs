use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxgate::dataset::SeriesDataset;
use ctxgate::eval::{
    self, accuracy_table, history_csv, metrics, series_length_csv, timing_csv, timing_report,
    ClassifierKind, ExperimentConfig, SuiteReport,
};
use ctxgate::forest::{self, ForestConfig, ForestModel};
use ctxgate::hydro::{VehicleParams, VehicleState};
use ctxgate::ident::{free_coefficients, identify, IdentMask, IdentProblem};
use ctxgate::nnet::{write_history_csv, ClassifierModel, TrainConfig};
use ctxgate::simgen::{self, ExcitationPlan, RawTrajectory, SimConfig};
use ctxgate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctxgate",
    version,
    about = "Context identification experiments for a simulated underwater vehicle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add the configured sensor noise.
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Simulate the full duration per context instead of the desk default.
    #[arg(long)]
    full_scale: bool,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.noise {
            cfg.noise = true;
        }
        if let Some(k) = self.classes {
            cfg.classes = k;
        }
        if self.full_scale {
            cfg = cfg.full_scale();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the contexts and write trajectories and datasets.
    Gen(Common),
    /// Train one classifier on datasets written by `gen`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "light-lstm")]
        classifier: ClassifierKind,
        #[arg(long, default_value_t = 50)]
        series_length: usize,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        /// Maximum tree depth; 0 means unbounded.
        #[arg(long, default_value_t = 0)]
        depth: usize,
    },
    /// Full grid search with one test evaluation per classifier.
    Grid(Common),
    /// Evaluate a saved model on the test split of a `gen` directory.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Recover hydrodynamic coefficients by least squares.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV to fit; simulated from the nominal vehicle if omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Vehicle parameter file used as ground truth; nominal if omitted.
        #[arg(long)]
        vehicle: Option<PathBuf>,
        /// Comma-separated coefficient groups: mass, damping, thrusters.
        #[arg(long, default_value = "mass,damping")]
        free: String,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
    },
    /// Merge suite reports into accuracy and timing tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directories or files holding suite reports.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))
}

fn dataset_name(l: usize, split: &str) -> String {
    if l == 1 {
        format!("flat_{split}.ctxd")
    } else {
        format!("l{l}_{split}.ctxd")
    }
}

fn load_dataset(dir: &Path, l: usize, split: &str) -> Result<SeriesDataset> {
    let path = dir.join(dataset_name(l, split));
    SeriesDataset::load(&path)
}

fn gen(common: &Common) -> Result<()> {
    let cfg = common.experiment()?;
    let out = &common.out;
    fs::create_dir_all(out.join("trajectories"))?;
    let data = eval::prepare_data(&cfg)?;
    write(&out.join("experiment.toml"), cfg.render())?;
    data.registry
        .save(&VehicleParams::nominal(), &out.join("contexts.toml"))?;
    VehicleParams::nominal().save(&out.join("vehicle.toml"))?;
    for t in &data.trajectories {
        let path = out
            .join("trajectories")
            .join(format!("class_{}.csv", t.label));
        let file = fs::File::create(&path)
            .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
        simgen::write_csv(t, file)?;
    }
    let mut lengths = vec![1];
    lengths.extend(&cfg.series_lengths);
    for l in lengths {
        let sets = if l == 1 {
            data.flat()?
        } else {
            data.windows(l, cfg.stride)?
        };
        for (ds, split) in sets.iter().zip(["train", "val", "test"]) {
            ds.save(&out.join(dataset_name(l, split)))?;
        }
    }
    println!(
        "wrote {} contexts x {} s and datasets for l in {:?} to {}",
        cfg.classes,
        cfg.duration,
        cfg.series_lengths,
        out.display()
    );
    Ok(())
}

fn train(
    common: &Common,
    data: &Path,
    kind: ClassifierKind,
    l: usize,
    trees: usize,
    depth: usize,
) -> Result<()> {
    let cfg = common.experiment()?;
    fs::create_dir_all(&common.out)?;
    let l = if kind.is_temporal() { l } else { 1 };
    let train = load_dataset(data, l, "train")?;
    let val = load_dataset(data, l, "val")?;
    if kind == ClassifierKind::Forest {
        let fc = ForestConfig {
            n_trees: trees,
            max_depth: (depth > 0).then_some(depth),
            seed: cfg.seed,
            ..ForestConfig::default()
        };
        let model = forest::fit_dataset(&fc, &train)?;
        let path = common.out.join("rf.ctxf");
        model.save(&path)?;
        println!(
            "rf: val accuracy {:.4}, saved {}",
            model.accuracy(&val)?,
            path.display()
        );
        return Ok(());
    }
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    let (model, seconds) = eval::train_network(kind, &train, &val, &tc)?;
    let path = common.out.join(format!("{}.ctxm", kind.name()));
    model.save(&path)?;
    let mut hist = Vec::new();
    write_history_csv(&model.history, &mut hist)?;
    write(
        &common.out.join(format!("{}_history.csv", kind.name())),
        hist,
    )?;
    println!(
        "{}: {} epochs in {:.1} s, val accuracy {:.4}, saved {}",
        kind.name(),
        model.history.len(),
        seconds,
        model.accuracy(&val)?,
        path.display()
    );
    Ok(())
}

fn write_tables(out: &Path, suites: &[SuiteReport]) -> Result<String> {
    let table = accuracy_table(suites);
    let timing: Vec<_> = suites.iter().flat_map(|s| s.timing.clone()).collect();
    write(&out.join("accuracy.txt"), &table)?;
    write(&out.join("timing.txt"), timing_report(&timing))?;
    write(&out.join("timing.csv"), timing_csv(&timing))?;
    write(&out.join("history.csv"), history_csv(suites))?;
    write(&out.join("series_length.csv"), series_length_csv(suites))?;
    Ok(table)
}

fn grid(common: &Common) -> Result<()> {
    let cfg = common.experiment()?;
    fs::create_dir_all(&common.out)?;
    let suite = eval::run_suite(&cfg)?;
    write(&common.out.join("suite.json"), suite.to_json())?;
    let table = write_tables(&common.out, std::slice::from_ref(&suite))?;
    print!("{table}");
    if let Some(fit) = suite.timing_fit {
        println!(
            "timing fit: {:.3e} s per window, R^2 = {:.4}",
            fit.slope, fit.r2
        );
    }
    Ok(())
}

fn evaluate(common: &Common, data: &Path, model: &Path) -> Result<()> {
    fs::create_dir_all(&common.out)?;
    let bytes = fs::read(model)
        .map_err(|e| Error::from(e).context(format!("reading {}", model.display())))?;
    let (name, truth, pred, k) = if bytes.starts_with(b"CTXFORST") {
        let m = ForestModel::decode(&bytes)?;
        let test = load_dataset(data, 1, "test")?;
        let pred = m.predict_dataset(&test)?;
        ("rf".to_string(), test.labels, pred, m.k)
    } else {
        let m = ClassifierModel::decode(&bytes)?;
        let test = load_dataset(data, m.network.spec().series_len, "test")?;
        let (pred, _) = m.predict(&test)?;
        (
            m.name.clone(),
            test.labels,
            pred,
            m.network.spec().classes(),
        )
    };
    let confusion = metrics(&truth, &pred, k)?;
    let json = serde_json::to_string_pretty(&confusion).expect("confusion serializes");
    write(&common.out.join(format!("{name}_confusion.json")), json)?;
    println!(
        "{name}: test accuracy {:.4} on {} windows",
        confusion.accuracy,
        truth.len()
    );
    Ok(())
}

fn parse_mask(text: &str) -> Result<IdentMask> {
    let mut mask = IdentMask {
        mass: false,
        damping: false,
        thrusters: false,
    };
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part {
            "mass" => mask.mass = true,
            "damping" => mask.damping = true,
            "thrusters" => mask.thrusters = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown coefficient group {other:?}"
                )))
            }
        }
    }
    Ok(mask)
}

fn run_identify(
    common: &Common,
    trajectory: Option<&Path>,
    vehicle: Option<&Path>,
    free: &str,
    lambda: f64,
) -> Result<()> {
    let cfg = common.experiment()?;
    fs::create_dir_all(&common.out)?;
    let truth = match vehicle {
        Some(path) => VehicleParams::load(path)?,
        None => VehicleParams::nominal(),
    };
    let traj: RawTrajectory = match trajectory {
        Some(path) => simgen::read_csv(open(path)?)
            .map_err(|e| e.context(format!("reading {}", path.display())))?,
        None => {
            let plan =
                ExcitationPlan::draw(cfg.excitation, cfg.duration, truth.n_thrusters(), cfg.seed)?;
            let sim = SimConfig {
                duration: cfg.duration,
                ..cfg.simulation
            };
            simgen::generate_trajectory(&truth, &plan, &sim, VehicleState::zero(), 0)?
        }
    };
    let traj = if cfg.noise {
        simgen::add_noise(&traj, &cfg.sigmas, cfg.seed)?
    } else {
        traj
    };
    let mask = parse_mask(free)?;
    let problem = IdentProblem {
        rows: &traj.rows,
        base: truth.clone(),
        free: free_coefficients(&truth, mask),
        lambda,
    };
    let result = identify(&problem)?;
    let path = common.out.join("identification.csv");
    let mut text = Vec::new();
    result.write_report(Some(&truth), &mut text)?;
    write(&path, text)?;
    println!(
        "{} coefficients from {} equations: max relative error {:.3e}, rms residual {:.3e}, condition {:.3e}",
        result.estimates.len(),
        result.equations,
        result.max_relative_error(&truth),
        result.rms_residual,
        result.condition
    );
    Ok(())
}

fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<SuiteReport>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    let mut suites = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f)
            .map_err(|e| Error::from(e).context(format!("reading {}", f.display())))?;
        match SuiteReport::from_json(&text) {
            Ok(s) => suites.push(s),
            Err(e) if f.file_name().is_some_and(|n| n == "suite.json") => {
                return Err(e.context(format!("reading {}", f.display())))
            }
            Err(_) => {}
        }
    }
    if suites.is_empty() {
        return Err(Error::Config("no suite reports found in the inputs".into()));
    }
    Ok(suites)
}

fn report(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    let suites = collect_reports(inputs)?;
    fs::create_dir_all(&common.out)?;
    print!("{}", write_tables(&common.out, &suites)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => gen(&common),
        Command::Train {
            common,
            data,
            classifier,
            series_length,
            trees,
            depth,
        } => train(&common, &data, classifier, series_length, trees, depth),
        Command::Grid(common) => grid(&common),
        Command::Eval {
            common,
            data,
            model,
        } => evaluate(&common, &data, &model),
        Command::Identify {
            common,
            trajectory,
            vehicle,
            free,
            lambda,
        } => run_identify(
            &common,
            trajectory.as_deref(),
            vehicle.as_deref(),
            &free,
            lambda,
        ),
        Command::Report { common, inputs } => report(&common, &inputs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
