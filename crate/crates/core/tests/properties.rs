use gan_audit::analysis::{histogram, pearson};
use gan_audit::inference::{knn1_outlier_score, roc_auc, L2};
use gan_audit::io::{decode_gten, encode_gten, Dtype};
use gan_audit::typicality::typicality_test;
use gan_audit::Tensor;
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..20).prop_map(|v| v as f64 * 0.5), 1..40)
}

proptest! {
    #[test]
    fn auc_is_antisymmetric(a in scores(), b in scores()) {
        let s = roc_auc(&a, &b).unwrap() + roc_auc(&b, &a).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms(a in scores(), b in scores()) {
        let f = |v: &Vec<f64>| v.iter().map(|x| (x * 0.7).exp() + 3.0).collect::<Vec<_>>();
        prop_assert_eq!(roc_auc(&a, &b).unwrap(), roc_auc(&f(&a), &f(&b)).unwrap());
    }

    #[test]
    fn pearson_is_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 3..30),
        noise in prop::collection::vec(-1.0f64..1.0, 30),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x * 0.3 + n).collect();
        if let (Ok(r), Ok(r2)) = (pearson(&xs, &ys), pearson(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>(), &ys)) {
            prop_assert!((r - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn gten_round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| ((seed ^ i as u64) as f64).sin() * 1e3).collect();
        let t = Tensor::new(shape, data).unwrap();
        let bytes = encode_gten(&t, Dtype::F64).unwrap();
        let (back, _) = decode_gten(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_gten(&back, Dtype::F64).unwrap(), bytes);
    }

    #[test]
    fn membership_ignores_group_order(mut g in prop::collection::vec(-20.0f64..0.0, 1..50), h in 0.0f64..20.0, eps in 0.0f64..5.0) {
        let (a, _) = typicality_test(&g, h, eps).unwrap();
        g.reverse();
        let (b, _) = typicality_test(&g, h, eps).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn margin_is_monotone_above_the_centre(g in prop::collection::vec(-5.0f64..5.0, 1..30), shift in 0.0f64..3.0) {
        // mean(g) + H >= 0 here, so raising the group mean raises the margin
        let h = 10.0;
        let (_, m0) = typicality_test(&g, h, 1.0).unwrap();
        let up: Vec<f64> = g.iter().map(|x| x + shift).collect();
        let (_, m1) = typicality_test(&up, h, 1.0).unwrap();
        prop_assert!(m1 >= m0 - 1e-12);
    }

    #[test]
    fn histogram_counts_in_range_values(values in prop::collection::vec(-2.0f64..2.0, 1..100), bins in 1usize..12) {
        let h = histogram(&values, bins, (-1.0, 1.0)).unwrap();
        let inside = values.iter().filter(|v| (-1.0..=1.0).contains(*v)).count();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), inside);
        prop_assert_eq!(h.excluded, values.len() - inside);
    }

    #[test]
    fn knn_score_ignores_train_order(pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..20), q in prop::collection::vec(-1.0f64..1.0, 3)) {
        let train: Vec<Tensor> = pts.iter().map(|p| Tensor::vector(p.clone()).unwrap()).collect();
        let q = Tensor::vector(q).unwrap();
        let a = knn1_outlier_score(&train, &q, &L2).unwrap();
        let rev: Vec<Tensor> = train.into_iter().rev().collect();
        prop_assert_eq!(a, knn1_outlier_score(&rev, &q, &L2).unwrap());
    }
}
