use ndarray::{array, Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{SeriesDataset, Split};
use crate::Error;

fn preset(arch: Architecture, l: usize, k: usize) -> NetworkSpec {
    arch.spec(9, l, k)
}

#[test]
fn preset_parameter_counts() {
    assert_eq!(param_count(&preset(Architecture::Lstm, 50, 3)), 662_531);
    assert_eq!(param_count(&preset(Architecture::LightLstm, 50, 3)), 17_155);
    assert_eq!(param_count(&preset(Architecture::Mlp, 1, 10)), 201_098);
}

#[test]
fn lstm_count_breakdown() {
    let shapes = preset(Architecture::Lstm, 10, 3).param_shapes();
    let sizes: Vec<usize> = shapes.iter().map(|(r, c)| r * c).collect();
    let per_layer = [
        sizes[0] + sizes[1] + sizes[2],
        sizes[3] + sizes[4] + sizes[5],
        sizes[6] + sizes[7],
        sizes[8] + sizes[9],
        sizes[10] + sizes[11],
    ];
    assert_eq!(per_layer, [70_656, 394_240, 131_584, 65_664, 387]);
}

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let n_lstm = rng.random_range(0..3);
    let n_dense = rng.random_range(0..3);
    let mut layers = Vec::new();
    for _ in 0..n_lstm {
        layers.push(LayerSpec::lstm(rng.random_range(1..6)));
    }
    for _ in 0..n_dense {
        let act = if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::None
        };
        layers.push(LayerSpec::dense(rng.random_range(1..6), act, 0.0));
    }
    layers.push(LayerSpec::softmax(rng.random_range(2..5)));
    let series_len = if n_lstm > 0 {
        rng.random_range(1..4)
    } else {
        1
    };
    NetworkSpec {
        input: rng.random_range(1..4),
        series_len,
        layers,
    }
}

#[test]
fn closed_form_count_matches_allocated_arrays() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let spec = random_spec(&mut rng);
        let net = Network::<f32>::new(spec.clone(), trial).unwrap();
        let enumerated: usize = spec.param_shapes().iter().map(|(r, c)| r * c).sum();
        assert_eq!(param_count(&spec), enumerated);
        assert_eq!(net.n_params(), enumerated);
        assert!(net.check_param_count());
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let relu = Activation::Relu;
    let cases = [
        NetworkSpec {
            input: 3,
            series_len: 1,
            layers: vec![],
        },
        NetworkSpec {
            input: 3,
            series_len: 1,
            layers: vec![LayerSpec::dense(4, relu, 0.0)],
        },
        NetworkSpec {
            input: 3,
            series_len: 2,
            layers: vec![
                LayerSpec::dense(4, relu, 0.0),
                LayerSpec::lstm(2),
                LayerSpec::softmax(2),
            ],
        },
        NetworkSpec {
            input: 3,
            series_len: 2,
            layers: vec![LayerSpec::dense(4, relu, 0.0), LayerSpec::softmax(2)],
        },
        NetworkSpec {
            input: 3,
            series_len: 1,
            layers: vec![LayerSpec::dense(4, relu, 1.0), LayerSpec::softmax(2)],
        },
        NetworkSpec {
            input: 3,
            series_len: 1,
            layers: vec![LayerSpec::softmax(2), LayerSpec::softmax(2)],
        },
    ];
    for spec in cases {
        assert!(matches!(spec.validate(), Err(Error::Config(_))), "{spec:?}");
    }
}

fn random_input(b: usize, l: usize, f: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((b, l, f), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    for arch in [Architecture::LightLstm, Architecture::Mlp] {
        let spec = preset(arch, 4, 5);
        let net = Network::<f64>::zeros(spec.clone()).unwrap();
        let x = random_input(3, spec.series_len, 9, 1);
        let p = net.forward(x.view(), Mode::Eval).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
}

#[test]
fn eval_forward_is_deterministic_and_normalized() {
    let spec = preset(Architecture::LightLstm, 6, 4);
    let net = Network::<f32>::new(spec, 9).unwrap();
    let x = random_input(7, 6, 9, 2).mapv(|v| v as f32);
    let a = net.forward(x.view(), Mode::Eval).unwrap();
    let b = net.forward(x.view(), Mode::Eval).unwrap();
    assert_eq!(a, b);
    let net64 = net.cast::<f64>();
    let p = net64.forward(x.mapv(f64::from).view(), Mode::Eval).unwrap();
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let net = Network::<f32>::new(preset(Architecture::LightLstm, 5, 3), 0).unwrap();
    let x = Array3::<f32>::zeros((2, 4, 9));
    assert!(matches!(
        net.forward(x.view(), Mode::Eval),
        Err(Error::ShapeMismatch { .. })
    ));
    let x = Array3::<f32>::zeros((2, 5, 8));
    assert!(matches!(
        net.forward(x.view(), Mode::Eval),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn single_step_lstm_matches_hand_computation() {
    let spec = NetworkSpec {
        input: 2,
        series_len: 1,
        layers: vec![LayerSpec::lstm(1), LayerSpec::softmax(2)],
    };
    // gate columns i, f, g, o
    let wx = array![[0.5, -0.3, 0.8, 0.1], [-0.2, 0.4, 0.6, -0.7]];
    let wh = array![[0.9, 0.9, 0.9, 0.9]];
    let b = array![[0.1, 1.0, -0.1, 0.2]];
    let w_out = array![[1.5, -2.0]];
    let b_out = array![[0.3, -0.3]];
    let net = Network::from_params(spec, vec![wx, wh, b, w_out, b_out]).unwrap();
    let (x0, x1) = (0.7, -1.2);
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let i = sig(0.5 * x0 - 0.2 * x1 + 0.1);
    let g = (0.8 * x0 + 0.6 * x1 - 0.1).tanh();
    let o = sig(0.1 * x0 - 0.7 * x1 + 0.2);
    let c = i * g; // c_prev = 0 so the forget gate drops out
    let h = o * c.tanh();
    let z = [1.5 * h + 0.3, -2.0 * h - 0.3];
    let e = [z[0].exp(), z[1].exp()];
    let expected = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    let x = Array3::from_shape_vec((1, 1, 2), vec![x0, x1]).unwrap();
    let p = net.forward(x.view(), Mode::Eval).unwrap();
    assert!((p[(0, 0)] - expected[0]).abs() < 1e-14);
    assert!((p[(0, 1)] - expected[1]).abs() < 1e-14);
}

#[test]
fn uniform_prediction_loss_is_ln_k() {
    let net = Network::<f64>::zeros(preset(Architecture::Mlp, 1, 3)).unwrap();
    let x = random_input(4, 1, 9, 5);
    let loss = net.loss(x.view(), &[0, 1, 2, 1], Mode::Eval).unwrap();
    assert!((loss - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn confident_prediction_loss_is_zero() {
    let logits: Array2<f64> = array![[800.0, 0.0, 0.0], [0.0, 0.0, 900.0]];
    assert_eq!(cross_entropy(&logits, &[0, 2]), 0.0);
    let p = softmax(logits);
    assert!(p.iter().all(|v: &f64| v.is_finite()));
}

#[test]
fn out_of_range_labels_are_rejected() {
    let net = Network::<f64>::zeros(preset(Architecture::Mlp, 1, 3)).unwrap();
    let x = random_input(2, 1, 9, 5);
    let err = net.loss(x.view(), &[0, 3], Mode::Eval).unwrap_err();
    assert!(matches!(
        err,
        Error::LabelOutOfRange {
            label: 3,
            classes: 3
        }
    ));
}

/// Largest relative error between backprop and central differences.
fn gradient_error(net: &Network<f64>, x: &Array3<f64>, labels: &[u32], seed: u64) -> f64 {
    let eps = 1e-5;
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads, _) = net
        .loss_and_gradients(x.view(), labels, &mut rng.clone())
        .unwrap();
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (a, grad) in grads.iter().enumerate() {
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = probe.params()[a][(r, c)];
            probe.params_mut()[a][(r, c)] = orig + eps;
            let up = probe
                .loss(x.view(), labels, Mode::Train(&mut rng.clone()))
                .unwrap();
            probe.params_mut()[a][(r, c)] = orig - eps;
            let down = probe
                .loss(x.view(), labels, Mode::Train(&mut rng.clone()))
                .unwrap();
            probe.params_mut()[a][(r, c)] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad[(r, c)];
            let denom = (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn tiny_lstm_gradients_match_finite_differences() {
    let spec = NetworkSpec {
        input: 2,
        series_len: 3,
        layers: vec![LayerSpec::lstm(4), LayerSpec::softmax(3)],
    };
    let net = Network::<f64>::new(spec, 11).unwrap();
    let x = random_input(5, 3, 2, 12);
    assert!(gradient_error(&net, &x, &[0, 1, 2, 2, 1], 0) < 1e-4);
}

#[test]
fn stacked_network_gradients_match_finite_differences() {
    for seed in 0..10 {
        let spec = NetworkSpec {
            input: 3,
            series_len: 4,
            layers: vec![
                LayerSpec::lstm(3),
                LayerSpec::lstm(4),
                LayerSpec::dense(5, Activation::Relu, 0.5),
                LayerSpec::dense(4, Activation::None, 0.0),
                LayerSpec::softmax(3),
            ],
        };
        let net = Network::<f64>::new(spec, seed).unwrap();
        let x = random_input(4, 4, 3, 100 + seed);
        let err = gradient_error(&net, &x, &[2, 0, 1, 2], seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn dropout_preserves_expectation() {
    let spec = NetworkSpec {
        input: 1,
        series_len: 1,
        layers: vec![
            LayerSpec::dense(1, Activation::None, 0.5),
            LayerSpec::softmax(2),
        ],
    };
    let net = Network::<f64>::from_params(
        spec,
        vec![
            array![[1.0]],
            array![[0.0]],
            array![[1.0, 0.0]],
            array![[0.0, 0.0]],
        ],
    )
    .unwrap();
    let n = 100_000;
    let x = Array3::from_elem((n, 1, 1), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // logit gap equals the dropped activation, so the mean gap is its expectation
    let logits = net.logits(x.view(), Mode::Train(&mut rng)).unwrap();
    let mean = logits.column(0).sum() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
    let kept = logits.column(0).iter().filter(|&&v| v > 0.0).count() as f64 / n as f64;
    assert!((kept - 0.5).abs() < 0.01);
    let eval = net.logits(x.view(), Mode::Eval).unwrap();
    assert!(eval.column(0).iter().all(|&v| v == 1.0));
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    let p = array![[0.2, 0.5, 0.3], [0.5, 0.5, 0.0], [0.1, 0.45, 0.45]];
    assert_eq!(argmax_rows(&p.view()), vec![1, 0, 1]);
}

#[test]
fn batch_prediction_equals_per_sample() {
    let net = Network::<f32>::new(preset(Architecture::LightLstm, 5, 3), 3).unwrap();
    let x = random_input(6, 5, 9, 8).mapv(|v| v as f32);
    let (all, probs) = net.predict(x.view()).unwrap();
    for (i, &label) in all.iter().enumerate() {
        let xi = x.slice(ndarray::s![i..i + 1, .., ..]);
        let (one, p) = net.predict(xi).unwrap();
        assert_eq!(one[0], label);
        assert_eq!(p.row(0), probs.row(i));
    }
}

fn toy_dataset(n_per_class: usize, split: Split, seed: u64) -> SeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let label = (i % 2) as u32;
        let centre = if label == 0 { -1.0 } else { 1.0 };
        data.push(centre + rng.random_range(-0.5f32..0.5));
        data.push(rng.random_range(-1.0f32..1.0));
        labels.push(label);
    }
    let n = labels.len();
    SeriesDataset {
        split,
        n_classes: 2,
        l: 1,
        f: 2,
        data,
        labels,
        starts: (0..n as u64).collect(),
        stats: None,
        provenance: [0; 32],
    }
}

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        input: 2,
        series_len: 1,
        layers: vec![
            LayerSpec::dense(8, Activation::Relu, 0.0),
            LayerSpec::softmax(2),
        ],
    }
}

#[test]
fn separable_toy_problem_is_learned() {
    let train_ds = toy_dataset(100, Split::Train, 1);
    let val_ds = toy_dataset(30, Split::Val, 2);
    let config = TrainConfig {
        max_epochs: 50,
        learning_rate: 1e-2,
        batch_size: 16,
        ..Default::default()
    };
    let net = Network::new(toy_spec(), 0).unwrap();
    let model = train("toy", net, &config, &train_ds, &val_ds).unwrap();
    assert!(model.history.len() <= 50);
    assert_eq!(model.accuracy(&train_ds).unwrap(), 1.0);
    let (_, probs) = model.predict(&val_ds).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic() {
    let train_ds = toy_dataset(40, Split::Train, 1);
    let val_ds = toy_dataset(10, Split::Val, 2);
    let config = TrainConfig {
        max_epochs: 5,
        seed: 7,
        ..Default::default()
    };
    let run = || {
        let mut spec = toy_spec();
        spec.layers[0].dropout = 0.5;
        train(
            "toy",
            Network::new(spec, 3).unwrap(),
            &config,
            &train_ds,
            &val_ds,
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn incompatible_dataset_is_rejected() {
    let train_ds = toy_dataset(10, Split::Train, 1);
    let net = Network::new(preset(Architecture::Mlp, 1, 2), 0).unwrap();
    let err = train("x", net, &TrainConfig::default(), &train_ds, &train_ds).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn plateau_schedule_decays_then_stops() {
    let config = TrainConfig::default();
    let mut s = PlateauSchedule::new(&config);
    assert!(s.step(1.0).improved);
    for epoch in 1..=9 {
        let st = s.step(1.0);
        assert!(!st.lr_reduced && !st.stop, "epoch {epoch}");
    }
    let st = s.step(1.0 - 5e-5); // below min_delta: still stagnant
    assert!(st.lr_reduced && !st.stop);
    assert!((s.lr - 0.9e-3).abs() < 1e-18);
    for _ in 0..9 {
        assert!(!s.step(1.0).stop);
    }
    let st = s.step(1.0);
    assert!(st.stop && st.lr_reduced);
    assert!((s.lr - 0.81e-3).abs() < 1e-15);
}

#[test]
fn plateau_improvement_resets_patience() {
    let mut s = PlateauSchedule::new(&TrainConfig::default());
    s.step(1.0);
    for _ in 0..9 {
        s.step(1.0);
    }
    assert!(s.step(0.5).improved);
    for _ in 0..9 {
        assert!(!s.step(0.5).lr_reduced);
    }
    assert_eq!(s.lr, 1e-3);
}

#[test]
fn train_config_validation() {
    for bad in [
        TrainConfig {
            lr_decay: 1.0,
            ..Default::default()
        },
        TrainConfig {
            lr_patience: 0,
            ..Default::default()
        },
        TrainConfig {
            stop_patience: 0,
            ..Default::default()
        },
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let train_ds = toy_dataset(20, Split::Train, 1);
    let val_ds = toy_dataset(5, Split::Val, 2);
    let config = TrainConfig {
        max_epochs: 3,
        ..Default::default()
    };
    let model = train(
        "toy",
        Network::new(toy_spec(), 3).unwrap(),
        &config,
        &train_ds,
        &val_ds,
    )
    .unwrap();
    let bytes = model.encode();
    assert_eq!(ClassifierModel::decode(&bytes).unwrap(), model);
    for cut in [0, 8, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(ClassifierModel::decode(&bytes[..cut]).is_err());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(ClassifierModel::decode(&extra).is_err());

    let mut csv = Vec::new();
    write_history_csv(&model.history, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,lr\n"));
    assert_eq!(text.lines().count(), model.history.len() + 1);
}

#[test]
fn architecture_names_round_trip() {
    for arch in [
        Architecture::Lstm,
        Architecture::LightLstm,
        Architecture::Mlp,
    ] {
        assert_eq!(arch.name().parse::<Architecture>().unwrap(), arch);
    }
    assert!("gru".parse::<Architecture>().is_err());
}

proptest! {
    #[test]
    fn checkpoint_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = ClassifierModel::decode(&bytes);
    }

    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let p = softmax(Array2::from_shape_vec((2, 3), v).unwrap());
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
