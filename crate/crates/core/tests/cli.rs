use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
classes = 2
duration = 1000
series_lengths = [3]
stride = 60
classifiers = ["light-lstm", "mlp", "rf"]
forest_trees = [2, 4]
forest_depths = [3]
timing_fractions = [0.5, 1.0]
timing_epochs = 1

[train]
max_epochs = 2

[excitation]
segment_length = 500.0
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxgate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = run(dir, args);
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn generate_train_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, &["gen", "--config", "tiny.toml", "--out", "data"]);
    for name in [
        "experiment.toml",
        "contexts.toml",
        "vehicle.toml",
        "trajectories/class_0.csv",
        "trajectories/class_1.csv",
        "flat_train.ctxd",
        "l3_test.ctxd",
    ] {
        assert!(dir.join("data").join(name).is_file(), "{name} missing");
    }

    let rf = ok(
        dir,
        &[
            "train",
            "--config",
            "tiny.toml",
            "--data",
            "data",
            "--classifier",
            "rf",
            "--trees",
            "3",
            "--depth",
            "4",
            "--out",
            "models",
        ],
    );
    assert!(rf.starts_with("rf: val accuracy"));
    ok(
        dir,
        &[
            "train",
            "--config",
            "tiny.toml",
            "--data",
            "data",
            "--classifier",
            "light-lstm",
            "--series-length",
            "3",
            "--out",
            "models",
        ],
    );
    assert!(dir.join("models/light-lstm_history.csv").is_file());

    let eval = ok(
        dir,
        &[
            "eval",
            "--data",
            "data",
            "--model",
            "models/rf.ctxf",
            "--out",
            "models",
        ],
    );
    assert!(eval.contains("test accuracy"));
    ok(
        dir,
        &[
            "eval",
            "--data",
            "data",
            "--model",
            "models/light-lstm.ctxm",
            "--out",
            "models",
        ],
    );
    let confusion = fs::read_to_string(dir.join("models/light-lstm_confusion.json")).unwrap();
    assert!(confusion.contains("matrix"));
}

#[test]
fn grid_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let table = ok(dir, &["grid", "--config", "tiny.toml", "--out", "clean"]);
    assert!(table.starts_with("classifier"));
    ok(
        dir,
        &[
            "grid",
            "--config",
            "tiny.toml",
            "--noise",
            "--seed",
            "4",
            "--out",
            "noisy",
        ],
    );
    let merged = ok(
        dir,
        &[
            "report", "--input", "clean", "--input", "noisy", "--out", "merged",
        ],
    );
    let header = merged.lines().next().unwrap();
    assert!(header.contains("tiny") && header.contains("tiny+noise"));
    assert_eq!(merged.lines().count(), 4);
    let timing = fs::read_to_string(dir.join("merged/timing.csv")).unwrap();
    assert!(timing.contains("tiny+noise-scaling"));
}

#[test]
fn identify_recovers_nominal_coefficients() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, &["gen", "--config", "tiny.toml", "--out", "data"]);
    let out = ok(
        dir,
        &[
            "identify",
            "--trajectory",
            "data/trajectories/class_0.csv",
            "--vehicle",
            "data/vehicle.toml",
            "--free",
            "damping,thrusters",
            "--out",
            "ident",
        ],
    );
    assert!(out.contains("max relative error"));
    let report = fs::read_to_string(dir.join("ident/identification.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert!(header.starts_with("coefficient"));
    assert!(report.lines().any(|l| l.starts_with("k1,")));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    fs::write(dir.join("bad.toml"), "duration = 1500\n").unwrap();
    let (c, err) = code(dir, &["gen", "--config", "bad.toml"]);
    assert_eq!(c, 2);
    assert!(err.contains("[config]"), "{err}");

    fs::write(dir.join("typo.toml"), "clases = 3\n").unwrap();
    assert_eq!(code(dir, &["grid", "--config", "typo.toml"]).0, 2);

    let (c, err) = code(dir, &["train", "--data", "missing"]);
    assert_eq!(c, 3);
    assert!(err.contains("missing"), "{err}");

    fs::write(dir.join("junk.ctxm"), b"not a model").unwrap();
    fs::create_dir(dir.join("empty")).unwrap();
    assert_eq!(
        code(dir, &["eval", "--data", "empty", "--model", "junk.ctxm"]).0,
        3
    );

    fs::write(
        dir.join("still.toml"),
        "duration = 1000\n[excitation]\namplitude_range = [0.0, 0.0]\n",
    )
    .unwrap();
    let (c, err) = code(dir, &["identify", "--config", "still.toml", "--out", "i"]);
    assert_eq!(c, 7, "{err}");

    assert_eq!(code(dir, &["identify", "--free", "fins"]).0, 2);
    assert_eq!(code(dir, &["nonsense"]).0, 2);
}
