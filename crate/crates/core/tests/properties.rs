use opnp::metrics::{auroc, ece, fpr_at_tpr};
use opnp::pruning::{prune_count, prune_weights};
use opnp::scoring::{energy_score, softmax, LogitVector};
use opnp::sensitivity::estimate_sensitivity;
use opnp::{ClassifierHead, FeatureSet, SensitivityMap};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-100.0..100.0f64, 1..80),
        // Coarse values to force ties.
        prop::collection::vec((0..5i32).prop_map(f64::from), 1..80),
    ]
}

fn head_and_features() -> impl Strategy<Value = (ClassifierHead, FeatureSet)> {
    (1..10usize, 1..6usize, 1..30usize).prop_flat_map(|(l, k, n)| {
        (
            prop::collection::vec(-2.0..2.0f32, l * k),
            prop::collection::vec(-1.0..1.0f32, k),
            prop::collection::vec(0.0..3.0f32, n * l),
        )
            .prop_map(move |(w, b, x)| {
                (
                    ClassifierHead::new(l, k, w, b).unwrap(),
                    FeatureSet::new(n, l, x, None, "p").unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn auroc_is_a_probability_and_complements(a in scores(), b in scores()) {
        let ab = auroc(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab + auroc(&b, &a).unwrap(), 1.0);
        prop_assert_eq!(auroc(&a, &a).unwrap(), 0.5);
    }

    #[test]
    fn auroc_ignores_order_and_monotone_maps(mut a in scores(), b in scores(), scale in 0.1..10.0f64, shift in -5.0..5.0f64) {
        let base = auroc(&a, &b).unwrap();
        a.reverse();
        prop_assert_eq!(auroc(&a, &b).unwrap(), base);
        // Affine maps with a power-of-two scale are exact, so ties survive.
        let s = scale.log2().round().exp2();
        let t = shift.round();
        let ma: Vec<f64> = a.iter().map(|v| v * s + t).collect();
        let mb: Vec<f64> = b.iter().map(|v| v * s + t).collect();
        prop_assert_eq!(auroc(&ma, &mb).unwrap(), base);
    }

    #[test]
    fn fpr_threshold_is_an_id_score(a in scores(), b in scores(), tpr in 0.05..=1.0f64) {
        let r = fpr_at_tpr(&a, &b, tpr).unwrap();
        prop_assert!(a.contains(&r.lambda));
        prop_assert!((0.0..=1.0).contains(&r.fpr));
        let accepted = a.iter().filter(|&&s| s >= r.lambda).count() as f64 / a.len() as f64;
        prop_assert!(accepted >= tpr - 1e-12);
    }

    #[test]
    fn energy_is_shift_equivariant_and_bounded(f in prop::collection::vec(-50.0..50.0f64, 1..30), c in -1e3..1e3f64) {
        let e = energy_score(&LogitVector::new(f.clone()).unwrap());
        let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e >= max && e <= max + (f.len() as f64).ln() + 1e-12);
        let shifted = energy_score(&LogitVector::new(f.iter().map(|v| v + c).collect()).unwrap());
        prop_assert!((shifted - e - c).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn softmax_is_a_distribution(f in prop::collection::vec(-700.0..700.0f64, 1..30), t in 0.05..20.0f64) {
        let p = softmax(&LogitVector::new(f).unwrap(), t).unwrap();
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ece_is_bounded(conf in prop::collection::vec(0.001..=1.0f64, 1..100), seed in any::<u64>(), bins in 1..30usize) {
        let correct: Vec<bool> = (0..conf.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let (e, rb) = ece(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(rb.bins.iter().map(|b| b.count).sum::<usize>(), conf.len());
    }

    #[test]
    fn pruned_counts_follow_ceil_and_nest(
        values in prop::collection::vec((0..4u8).prop_map(f32::from), 2..200),
        lo in 0.0..45.0f64,
        hi in 0.0..45.0f64,
    ) {
        let n = values.len();
        let map = SensitivityMap::new(n, 1, values, 1, "p").unwrap();
        let head = ClassifierHead::new(n, 1, vec![1.0; n], vec![0.0]).unwrap();
        let want = prune_count(lo, n) + prune_count(hi, n);
        prop_assume!(want < n);
        let out = prune_weights(&head, &map, lo, hi).unwrap();
        prop_assert_eq!(out.pruned_weights, want);
        prop_assert_eq!(out.weight_mask.iter().filter(|&&m| !m).count(), want);
        prop_assert_eq!(prune_count(lo, n), (lo * n as f64 / 100.0 - 1e-9).ceil().max(0.0) as usize);
        // Raising the low percentage prunes a superset.
        let more = prune_weights(&head, &map, (lo + 5.0).min(50.0), hi);
        if let Ok(more) = more {
            prop_assert!(out.weight_mask.iter().zip(&more.weight_mask).all(|(&a, &b)| a || !b));
        }
    }

    #[test]
    fn sensitivity_is_bounded_by_mean_activation((head, fs) in head_and_features()) {
        let map = estimate_sensitivity(&head, &fs, 1.0, 0).unwrap();
        let n = fs.rows() as f64;
        for i in 0..head.features() {
            let mean_h: f64 = fs.iter_rows().map(|r| r[i] as f64).sum::<f64>() / n;
            let mut col_sum = 0.0;
            for j in 0..head.classes() {
                prop_assert!(map.get(i, j) as f64 <= mean_h * (1.0 + 1e-6) + 1e-12);
                col_sum += map.get(i, j) as f64;
            }
            // Softmax sums to one, so the row of M sums to the mean activation.
            prop_assert!((col_sum - mean_h).abs() <= 1e-5 * (1.0 + mean_h));
        }
    }

    #[test]
    fn sensitivity_ignores_row_order((head, fs) in head_and_features()) {
        let reversed: Vec<usize> = (0..fs.rows()).rev().collect();
        let flipped = fs.select_rows(&reversed, "r").unwrap();
        let a = estimate_sensitivity(&head, &fs, 1.0, 0).unwrap();
        let b = estimate_sensitivity(&head, &flipped, 1.0, 0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()));
        }
    }
}
