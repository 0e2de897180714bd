use std::path::Path;

use opnp::io;
use opnp::{
    ClassifierHead, FeatureSet, NeuronStatistic, OpnpError, ScoreKind, ScoreVector, SensitivityMap,
};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE / 4.0),
        Just(f32::MAX),
    ]
}

fn feature_set() -> impl Strategy<Value = FeatureSet> {
    (1..12usize, 1..9usize, any::<bool>()).prop_flat_map(|(rows, cols, labelled)| {
        (
            prop::collection::vec(finite_f32(), rows * cols),
            prop::collection::vec(any::<u32>(), rows),
        )
            .prop_map(move |(data, labels)| {
                FeatureSet::new(rows, cols, data, labelled.then_some(labels), "p").unwrap()
            })
    })
}

fn head() -> impl Strategy<Value = ClassifierHead> {
    (1..8usize, 1..6usize).prop_flat_map(|(l, k)| {
        (
            prop::collection::vec(finite_f32(), l * k),
            prop::collection::vec(finite_f32(), k),
            prop::collection::vec(any::<bool>(), l * k),
            prop::collection::vec(any::<bool>(), l),
            prop::option::of(prop::collection::vec("[a-zé ]{0,6}", k)),
            prop::option::of(0.0f32..10.0),
        )
            .prop_map(move |(w, b, wm, nm, names, clip)| {
                ClassifierHead::new(l, k, w, b)
                    .unwrap()
                    .with_masks(wm, nm)
                    .unwrap()
                    .with_class_names(names)
                    .unwrap()
                    .with_activation_clip(clip)
                    .unwrap()
            })
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn parse(bytes: &[u8]) -> opnp::Result<FeatureSet> {
    io::parse_features(Path::new("mem.opnf"), bytes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn features_round_trip_bitwise(fs in feature_set()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.opnf");
        io::write_features(&p, &fs).unwrap();
        let len = std::fs::metadata(&p).unwrap().len();
        prop_assert_eq!(Some(len), io::feature_file_size(fs.rows() as u64, fs.cols() as u64, fs.labels().is_some()));
        let back = io::read_features(&p).unwrap();
        prop_assert_eq!(bits(back.data()), bits(fs.data()));
        prop_assert_eq!(back.labels(), fs.labels());
        prop_assert_eq!((back.rows(), back.cols()), (fs.rows(), fs.cols()));
    }

    #[test]
    fn head_round_trips_bitwise(h in head()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.json");
        io::write_head(&p, &h).unwrap();
        let back = io::read_head(&p).unwrap();
        prop_assert_eq!(bits(back.weights()), bits(h.weights()));
        prop_assert_eq!(bits(back.bias()), bits(h.bias()));
        prop_assert_eq!(back.weight_mask(), h.weight_mask());
        prop_assert_eq!(back.neuron_mask(), h.neuron_mask());
        prop_assert_eq!(back.class_names(), h.class_names());
        prop_assert_eq!(back.activation_clip(), h.activation_clip());
    }

    #[test]
    fn sensitivity_round_trips(values in prop::collection::vec(0.0..1e3f32, 12), n in 1..1000usize) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let map = SensitivityMap::new(4, 3, values, n, "train ratio=1 seed=0").unwrap();
        let stats = opnp::sensitivity::all_neuron_sensitivities(&map).unwrap();
        io::write_sensitivity(&p, &map, &stats).unwrap();
        let (m, s) = io::read_sensitivity(&p).unwrap();
        prop_assert_eq!(bits(m.values()), bits(map.values()));
        prop_assert_eq!(m.sample_count(), n);
        prop_assert_eq!(s.len(), NeuronStatistic::ALL.len());
        prop_assert_eq!(s, stats);
    }

    #[test]
    fn scores_round_trip(values in prop::collection::vec(-1e300..1e300f64, 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let sv = ScoreVector::new(values, ScoreKind::Energy, 1.0).unwrap();
        io::write_scores(&p, &sv).unwrap();
        let back = io::read_scores(&p).unwrap();
        for (a, b) in back.scores().iter().zip(sv.scores()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        prop_assert_eq!(back.kind(), ScoreKind::Energy);
    }

    #[test]
    fn truncated_features_are_rejected(fs in feature_set(), cut in 0.0..1.0f64) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.opnf");
        io::write_features(&p, &fs).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let keep = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(keep < bytes.len());
        prop_assert!(parse(&bytes[..keep]).is_err());
    }

    #[test]
    fn corrupted_features_never_panic(fs in feature_set(), pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.opnf");
        io::write_features(&p, &fs).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] = byte;
        // Either a typed error or a valid set of the recorded shape.
        if let Ok(back) = parse(&bytes) {
            prop_assert_eq!(back.rows() * back.cols(), back.data().len());
        }
    }
}

#[test]
fn header_is_thirty_two_bytes() {
    let fs = FeatureSet::new(1, 1, vec![2.5], None, "one").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.opnf");
    io::write_features(&p, &fs).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes.len(), 36);
    assert_eq!(&bytes[..4], b"OPNF");
    assert_eq!(&bytes[32..], &2.5f32.to_le_bytes());
}

#[test]
fn label_flag_other_than_zero_or_one_is_rejected() {
    let fs = FeatureSet::new(1, 1, vec![1.0], None, "x").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.opnf");
    io::write_features(&p, &fs).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[28] = 2;
    assert!(matches!(
        parse(&bytes),
        Err(OpnpError::UnsupportedVersion { .. })
    ));
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.json");
    std::fs::write(&p, r#"{"L":1,"K":1,"W":[1.0]}"#).unwrap();
    match io::read_head(&p) {
        Err(OpnpError::SchemaError { field, .. }) => assert_eq!(field, "b"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn grid_defaults_fill_optional_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.json");
    std::fs::write(
        &p,
        r#"{"rho_min_w":[0,5],"rho_max_w":[0],"rho_min_o":[0],"rho_max_o":[0,1]}"#,
    )
    .unwrap();
    let grid = io::read_grid(&p).unwrap();
    assert_eq!(grid.size(), 4);
    assert_eq!(grid.neuron_statistic, NeuronStatistic::Mean);
}
