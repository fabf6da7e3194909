use proptest::prelude::*;

use super::*;

fn ramp(label: u32, len: usize, f: usize) -> ClassSeries {
    let rows = (0..len * f)
        .map(|i| (i / f) as f64 + 0.01 * (i % f) as f64 + label as f64)
        .collect();
    ClassSeries {
        label,
        start: 0,
        f,
        rows,
    }
}

fn ramps(classes: u32, len: usize) -> Vec<ClassSeries> {
    (0..classes).map(|c| ramp(c, len, 3)).collect()
}

#[test]
fn split_sizes() {
    let set = split_consecutive(&ramps(3, 40_000), SplitRatios::default()).unwrap();
    for c in 0..3 {
        assert_eq!(
            (set.train[c].len(), set.val[c].len(), set.test[c].len()),
            (24_000, 8_000, 8_000)
        );
    }
    let set = split_consecutive(&ramps(2, 10), SplitRatios::default()).unwrap();
    assert_eq!(
        (set.train[0].len(), set.val[0].len(), set.test[0].len()),
        (6, 2, 2)
    );
    assert_eq!(set.train[1].len(), set.train[0].len());
    assert_eq!(set.n_classes, 2);
}

#[test]
fn split_preserves_order() {
    let series = ramps(1, 50);
    let set = split_consecutive(&series, SplitRatios::default()).unwrap();
    let mut joined = set.train[0].rows.clone();
    joined.extend(&set.val[0].rows);
    joined.extend(&set.test[0].rows);
    assert_eq!(joined, series[0].rows);
    assert_eq!(set.val[0].start, 30);
    assert_eq!(set.test[0].start, 40);
}

#[test]
fn split_rejects_short_classes() {
    let r = split_consecutive(&ramps(2, 9), SplitRatios::default());
    assert!(matches!(r, Err(Error::TooFewSamples { len: 9, .. })));
}

#[test]
fn window_count_matches_formula() {
    let ds = window(&ramps(1, 24_000), Split::Train, 1, 100, 10).unwrap();
    assert_eq!(ds.len(), 2391);
    let ds = window(&ramps(1, 57), Split::Train, 1, 1, 1).unwrap();
    assert_eq!(ds.len(), 57);
    assert_eq!(
        ds.data,
        ramps(1, 57)[0]
            .rows
            .iter()
            .map(|&v| v as f32)
            .collect::<Vec<_>>()
    );
}

#[test]
fn window_rejects_long_windows() {
    let r = window(&ramps(1, 20), Split::Val, 1, 21, 1);
    assert!(matches!(
        r,
        Err(Error::WindowTooLong {
            window: 21,
            len: 20
        })
    ));
    assert!(window(&ramps(1, 20), Split::Val, 1, 5, 0).is_err());
}

#[test]
fn flatten_examples() {
    let ds = window(&ramps(2, 6), Split::Train, 2, 3, 3).unwrap();
    assert_eq!(ds.len(), 4);
    let flat = flatten(&window(&ramps(1, 6), Split::Train, 1, 3, 3).unwrap());
    assert_eq!(flat.len(), 6);
    assert_eq!(flat.l, 1);
    let flat = flatten(&ds);
    assert_eq!(flat.len(), ds.len() * ds.l);
    assert_eq!(flat.data, ds.data);
    assert_eq!(
        flat.class_counts(),
        ds.class_counts()
            .iter()
            .map(|c| c * ds.l)
            .collect::<Vec<_>>()
    );
}

#[test]
fn normalization_uses_train_statistics() {
    let mut series = ramps(2, 100);
    // constant feature 1
    for s in &mut series {
        for i in 0..s.len() {
            s.rows[i * 3 + 1] = 4.0;
        }
    }
    let set = split_consecutive(&series, SplitRatios::default()).unwrap();
    let (norm, stats) = normalize(&set).unwrap();
    assert!(stats.degenerate[1] && !stats.degenerate[0]);
    assert!(norm
        .train
        .iter()
        .all(|s| (0..s.len()).all(|i| s.row(i)[1] == 4.0)));

    let train_stats = NormStats::from_series(&norm.train).unwrap();
    for k in [0, 2] {
        assert!(train_stats.mean[k].abs() < 1e-9);
        assert!((train_stats.std[k] - 1.0).abs() < 1e-6);
    }
    // the ramp keeps rising, so later splits sit well above the train mean
    let test_stats = NormStats::from_series(&norm.test).unwrap();
    assert!(test_stats.mean[0] > 1.0);
}

#[test]
fn normalization_needs_training_data() {
    let set = SplitSet {
        f: 3,
        n_classes: 0,
        train: vec![],
        val: vec![],
        test: vec![],
    };
    assert!(normalize(&set).is_err());
}

#[test]
fn extracted_features_follow_declared_order() {
    use crate::simgen::{RawRow, RawTrajectory};
    use nalgebra::Vector6;
    let row = RawRow {
        t: 0.0,
        nu_dot: Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
        nu: Vector6::new(7.0, 8.0, 9.0, 10.0, 11.0, 12.0),
        eta: Vector6::repeat(99.0),
        command: vec![13.0, 14.0, 15.0],
    };
    let s = extract_features(&RawTrajectory {
        label: 2,
        rows: vec![row],
    });
    assert_eq!(
        s.rows,
        vec![1.0, 2.0, 6.0, 7.0, 8.0, 12.0, 13.0, 14.0, 15.0]
    );
    assert_eq!(feature_names(3).len(), 9);
}

#[test]
fn decode_rejects_corruption() {
    let ds = window(&ramps(2, 30), Split::Test, 2, 5, 2).unwrap();
    let bytes = ds.encode();
    assert!(SeriesDataset::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(SeriesDataset::decode(&bad).is_err());
    let mut huge = bytes.clone();
    huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(SeriesDataset::decode(&huge).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(SeriesDataset::decode(&extra).is_err());
}

#[test]
fn text_export_has_one_line_per_step() {
    let ds = window(&ramps(1, 12), Split::Train, 1, 4, 4).unwrap();
    let mut out = Vec::new();
    ds.write_text(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1 + ds.len() * 4);
    assert!(text.starts_with("window,step,label,start,f0,f1,f2"));
}

proptest! {
    #[test]
    fn windows_never_leak_across_splits(
        len in 10usize..400,
        classes in 1u32..4,
        l in 1usize..40,
        stride in 1usize..15,
    ) {
        let set = split_consecutive(&ramps(classes, len), SplitRatios::default()).unwrap();
        let mut covered: [Vec<(u32, u64)>; 3] = Default::default();
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let part = set.part(split);
            if part.iter().any(|s| s.len() < l) {
                prop_assert!(window(part, split, set.n_classes, l, stride).is_err());
                continue;
            }
            let ds = window(part, split, set.n_classes, l, stride).unwrap();
            for (i, &start) in ds.starts.iter().enumerate() {
                let seg = &part[ds.labels[i] as usize];
                prop_assert!(start >= seg.start);
                prop_assert!(start + l as u64 <= seg.start + seg.len() as u64);
                for s in start..start + l as u64 {
                    covered[k].push((ds.labels[i], s));
                }
            }
            let counts = ds.class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            let flat = flatten(&ds);
            prop_assert_eq!(flat.len(), ds.len() * l);
        }
        for a in 0..3 {
            for b in a + 1..3 {
                prop_assert!(covered[a].iter().all(|x| !covered[b].contains(x)));
            }
        }
    }

    #[test]
    fn encode_decode_is_bit_exact(
        len in 10usize..60,
        l in 1usize..8,
        with_stats in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut series = ramps(2, len);
        for (i, v) in series[1].rows.iter_mut().enumerate() {
            *v = ((seed.wrapping_mul(i as u64 + 1)) % 1000) as f64 / 7.0;
        }
        let mut ds = window(&series, Split::Train, 2, l, 1 + (seed % 4) as usize).unwrap();
        if with_stats {
            ds.stats = Some(NormStats::from_series(&series).unwrap());
        }
        ds.provenance = [seed as u8; 32];
        let bytes = ds.encode();
        let back = SeriesDataset::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.encode(), bytes);
    }
}
