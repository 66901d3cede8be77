use deepercluster_core::clustering::{
    distributed_kmeans_fit, hierarchical_fit, kmeans_fit, kmeans_fit_from, kmeans_objective,
    split_rows, Assignment, Centroids, KMeansConfig,
};
use deepercluster_core::metrics::{nmi, Partition};
use deepercluster_core::numerics::{squared_distance, Matrix, Rng};
use deepercluster_core::preprocess::RotationLabel;

fn random_points(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform_in(-5.0, 5.0)).collect()).unwrap()
}

/// Sum of squared deviations from the cluster means, or `None` if a
/// cluster is empty.
fn partition_cost(x: &Matrix, labels: &[usize], k: usize) -> Option<(f64, Matrix)> {
    let d = x.cols();
    let mut means = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for c in 0..d {
            means.set(l, c, means.get(l, c) + x.get(r, c));
        }
    }
    if counts.contains(&0) {
        return None;
    }
    for l in 0..k {
        for c in 0..d {
            means.set(l, c, means.get(l, c) / counts[l] as f64);
        }
    }
    let cost = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| squared_distance(x.row(r), means.row(l)))
        .sum();
    Some((cost, means))
}

/// Exhaustive search over all labelings with every cluster used.
fn brute_force_optimum(x: &Matrix, k: usize) -> (f64, Matrix) {
    let n = x.rows();
    let mut best: Option<(f64, Matrix)> = None;
    let mut labels = vec![0usize; n];
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        if let Some((cost, means)) = partition_cost(x, &labels, k) {
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, means));
            }
        }
    }
    best.unwrap()
}

#[test]
fn never_beats_the_exhaustive_optimum_and_keeps_it() {
    let mut rng = Rng::new(21);
    for case in 0..60 {
        let k = 1 + rng.below(3);
        let n = k + rng.below(9 - k);
        let d = 1 + rng.below(2);
        let x = random_points(n, d, &mut rng);
        let (opt, means) = brute_force_optimum(&x, k);
        let fit = kmeans_fit(&x, &KMeansConfig::new(k, case)).unwrap();
        assert!(fit.objective >= opt - 1e-9 * opt.max(1.0), "case {case}");
        let from_opt = kmeans_fit_from(&x, &Centroids(means), &KMeansConfig::new(k, case)).unwrap();
        assert!((from_opt.objective - opt).abs() <= 1e-9 * opt.max(1.0), "case {case}");
    }
}

#[test]
fn objective_matches_per_point_loop() {
    let mut rng = Rng::new(22);
    let x = random_points(25, 3, &mut rng);
    let c = random_points(4, 3, &mut rng);
    let labels: Vec<usize> = (0..25).map(|_| rng.below(4)).collect();
    let mut want = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        for j in 0..3 {
            let diff = x.get(r, j) - c.get(l, j);
            want += diff * diff;
        }
    }
    let got = kmeans_objective(&x, &Centroids(c), &Assignment::new(labels, 4).unwrap()).unwrap();
    assert!((got - want).abs() <= 1e-10 * want);
}

#[test]
fn assignments_are_nearest_centroids() {
    let mut rng = Rng::new(23);
    let x = random_points(200, 3, &mut rng);
    let init = random_points(5, 3, &mut rng);
    // one iteration: labels come from `init`, then centroids move
    let cfg = KMeansConfig { max_iters: 1, ..KMeansConfig::new(5, 3) };
    let fit = kmeans_fit_from(&x, &Centroids(init.clone()), &cfg).unwrap();
    if fit.history[0].repaired {
        return;
    }
    for (r, &l) in fit.assignment.labels().iter().enumerate() {
        let dists: Vec<f64> = (0..5).map(|j| squared_distance(x.row(r), init.row(j))).collect();
        let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(dists[l] <= best + 1e-9);
        assert_eq!(dists.iter().position(|&d| d <= best + 1e-9), Some(l));
    }
}

#[test]
fn shard_counts_agree_on_two_thousand_points() {
    let mut rng = Rng::new(24);
    let x = random_points(2000, 4, &mut rng);
    let cfg = KMeansConfig::new(8, 5);
    let serial = kmeans_fit(&x, &cfg).unwrap();
    for shards in [1, 2, 4, 8] {
        let dist = distributed_kmeans_fit(&split_rows(&x, shards), &cfg).unwrap();
        assert_eq!(dist.concatenated_labels(), serial.assignment.labels());
        for (a, b) in dist.centroids.0.as_slice().iter().zip(serial.centroids.0.as_slice()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12));
        }
    }
}

fn blob_points(centres: &[[f64; 2]], per: usize, noise: f64, rng: &mut Rng) -> (Matrix, Vec<usize>) {
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for i in 0..centres.len() * per {
        let c = i % centres.len();
        rows.push(vec![centres[c][0] + noise * rng.normal(), centres[c][1] + noise * rng.normal()]);
        truth.push(c);
    }
    (Matrix::from_rows(&rows).unwrap(), truth)
}

#[test]
fn two_pairs_of_blobs_are_recovered_exactly() {
    let mut rng = Rng::new(25);
    let (x, truth) = blob_points(&[[0.0, 0.0], [0.0, 3.0], [20.0, 0.0], [20.0, 3.0]], 50, 0.1, &mut rng);
    for seed in 0..5 {
        let part = hierarchical_fit(&x, &RotationLabel::ALL, 2, 2, &KMeansConfig::new(2, seed)).unwrap();
        let score = nmi(&Partition::from_labels(part.flat_labels()), &Partition::from_labels(truth.clone())).unwrap();
        assert!((score - 1.0).abs() < 1e-12, "seed {seed}: {score}");
        // level 1 keeps every blob whole and puts two blobs in each cluster
        let coarse = part.coarse_labels();
        let mut blobs_per_cluster = [0; 2];
        for blob in 0..4 {
            assert!(truth.iter().zip(coarse).all(|(&t, &c)| t != blob || c == coarse[blob]));
            blobs_per_cluster[coarse[blob]] += 1;
        }
        assert_eq!(blobs_per_cluster, [2, 2]);
    }
}

#[test]
fn desk_scale_deployment_shape() {
    // m = 4 coarse clusters, each split into k = 16 by its own fit
    let mut rng = Rng::new(26);
    let x = random_points(400, 3, &mut rng);
    let part = hierarchical_fit(&x, &RotationLabel::ALL, 4, 16, &KMeansConfig::new(4, 1)).unwrap();
    assert_eq!(part.num_super_classes(), 16);
    assert_eq!(part.total_sub_clusters(), 64);
    let flat = part.flat_labels();
    let mut used = vec![false; 64];
    for &l in &flat {
        used[l] = true;
    }
    assert!(used.iter().all(|&u| u));
}
