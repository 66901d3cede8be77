use deepercluster_core::clustering::{distributed_kmeans_fit, kmeans_fit, split_rows, KMeansConfig};
use deepercluster_core::metrics::{balance_entropy, nmi, Partition};
use deepercluster_core::model::{log_softmax, softmax};
use deepercluster_core::numerics::{fit_whitening, apply_whitening, l2_normalize_rows, Matrix};
use deepercluster_core::preprocess::{rotate, sobel, Image, RotationLabel};
use proptest::prelude::*;

fn image(max_side: usize) -> impl Strategy<Value = Image> {
    (prop::sample::select(vec![1usize, 3]), 3usize..=max_side, 3usize..=max_side).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(0.0f64..1.0, c * h * w)
            .prop_map(move |px| Image::new(c, h, w, px).unwrap())
    })
}

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn labels(n: usize, classes: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..classes, n)
}

proptest! {
    #[test]
    fn rotation_then_inverse_is_identity(img in image(6), r in 0usize..4) {
        let r = RotationLabel::new(r).unwrap();
        let back = rotate(&rotate(&img, r), RotationLabel::new((4 - r.index()) % 4).unwrap());
        prop_assert_eq!(back, img);
    }

    #[test]
    fn sobel_flips_sign_under_half_turn(img in image(7)) {
        let lhs = sobel(&rotate(&img, RotationLabel::R180)).unwrap();
        let rhs = rotate(&sobel(&img).unwrap(), RotationLabel::R180);
        let (h, w) = (lhs.height(), lhs.width());
        for c in 0..2 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    prop_assert!((lhs.at(c, y, x) + rhs.at(c, y, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sobel_ignores_constant_offset(img in image(6), offset in -5.0f64..5.0) {
        let shifted = Image::new(
            img.channels(), img.height(), img.width(),
            img.pixels().iter().map(|p| p + offset).collect(),
        ).unwrap();
        let a = sobel(&img).unwrap();
        let b = sobel(&shifted).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalisation_is_idempotent(m in matrix(1..6, 1..6)) {
        let once = l2_normalize_rows(&m);
        let twice = l2_normalize_rows(&once);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-1e4f64..1e4, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(log_softmax(&logits).iter().all(|v| v.is_finite() && *v <= 0.0));
    }

    #[test]
    fn nmi_symmetric_and_bounded(a in labels(30, 4), b in labels(30, 5)) {
        let (pa, pb) = (Partition::from_labels(a), Partition::from_labels(b));
        let ab = nmi(&pa, &pb).unwrap();
        let ba = nmi(&pb, &pa).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn nmi_and_balance_ignore_relabelling(a in labels(30, 4), b in labels(30, 4), perm in Just([2usize, 0, 3, 1])) {
        let relabelled: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        let (pa, pr, pb) = (
            Partition::new(a, 4).unwrap(),
            Partition::new(relabelled, 4).unwrap(),
            Partition::new(b, 4).unwrap(),
        );
        prop_assert!((nmi(&pa, &pb).unwrap() - nmi(&pr, &pb).unwrap()).abs() <= 1e-12);
        prop_assert!((balance_entropy(&pa) - balance_entropy(&pr)).abs() <= 1e-12);
    }

    #[test]
    fn whitened_fitting_sample_has_unit_covariance(m in matrix(40..60, 2..5)) {
        let Ok(t) = fit_whitening(&m, None, 1e-5) else { return Ok(()) };
        let smallest = t.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(smallest > 1e-2);
        let cov = apply_whitening(&t, &m).unwrap().covariance();
        let max_diag = (0..cov.rows()).map(|i| cov.get(i, i)).fold(0.0, f64::max);
        for i in 0..cov.rows() {
            let lambda = t.eigenvalues()[i];
            prop_assert!((cov.get(i, i) - lambda / (lambda + 1e-5)).abs() < 1e-9);
            for j in 0..cov.cols() {
                if i != j {
                    prop_assert!(cov.get(i, j).abs() <= 1e-6 * max_diag);
                }
            }
        }
    }

    #[test]
    fn sharded_kmeans_matches_serial(m in matrix(12..40, 1..4), k in 1usize..4, shards in 1usize..6, seed in 0u64..1000) {
        let cfg = KMeansConfig::new(k, seed);
        let serial = kmeans_fit(&m, &cfg).unwrap();
        let dist = distributed_kmeans_fit(&split_rows(&m, shards), &cfg).unwrap();
        prop_assert_eq!(dist.concatenated_labels(), serial.assignment.labels().to_vec());
        for (a, b) in dist.centroids.0.as_slice().iter().zip(serial.centroids.0.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn lloyd_objective_never_increases_without_repair(m in matrix(10..40, 1..4), k in 1usize..5, seed in 0u64..1000) {
        let fit = kmeans_fit(&m, &KMeansConfig::new(k, seed)).unwrap();
        for w in fit.history.windows(2) {
            if !w[1].repaired {
                prop_assert!(w[1].objective <= w[0].objective * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
