//! k-means, serial and shard-distributed, and the two-level hierarchical
//! clustering that produces super-class and sub-class targets.
//!
//! The distributed variant never moves feature rows between shards: each
//! shard assigns its own rows and reports per-cluster `(count, sum)` pairs
//! ([`ShardStats`]), which are reduced in ascending shard order before the
//! centroid update. Initial centroids and empty-cluster donors are chosen by
//! global row index, so a sharded run follows the same trajectory as a serial
//! run on the concatenated rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{dot, mix_seed, squared_distance, Matrix, Rng};
use crate::preprocess::RotationLabel;

/// Magnitude of the coordinate jitter added to a centroid re-seeded from a
/// donor point.
pub const REPAIR_PERTURBATION: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 10,
            seed,
            tolerance: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// `k x d` centroid matrix, one centroid per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(pub Matrix);

impl Centroids {
    pub fn k(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        self.0.row(j)
    }
}

/// Cluster index per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// Per-cluster `(count, feature sum)` for one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardStats {
    counts: Vec<usize>,
    sums: Matrix,
}

impl ShardStats {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            counts: vec![0; k],
            sums: Matrix::zeros(k, d),
        }
    }

    /// Accumulates rows in order into their cluster's running sum.
    pub fn compute(shard: &Matrix, labels: &[usize], k: usize) -> Self {
        let mut stats = Self::zeros(k, shard.cols());
        for (row, &l) in shard.row_iter().zip(labels) {
            stats.counts[l] += 1;
            for (s, &x) in stats.sums.row_mut(l).iter_mut().zip(row) {
                *s += x;
            }
        }
        stats
    }

    /// `self += other`.
    pub fn merge(&mut self, other: &ShardStats) {
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        for (s, o) in self.sums.as_mut_slice().iter_mut().zip(other.sums.as_slice()) {
            *s += o;
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn sums(&self) -> &Matrix {
        &self.sums
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `sum / count` per cluster; `None` for clusters without members.
    fn means(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.counts.len())
            .map(|j| {
                let n = self.counts[j];
                (n > 0).then(|| self.sums.row(j).iter().map(|s| s / n as f64).collect())
            })
            .collect()
    }
}

/// One Lloyd iteration as observed after its centroid update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    /// Largest centroid displacement in this iteration.
    pub movement: f64,
    /// Whether empty clusters were re-seeded in this iteration, in which
    /// case the objective may exceed the previous one.
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Centroids,
    pub assignment: Assignment,
    pub objective: f64,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedFit {
    pub centroids: Centroids,
    /// One assignment per input shard, in shard order.
    pub assignments: Vec<Assignment>,
    pub objective: f64,
    pub history: Vec<IterationRecord>,
}

impl DistributedFit {
    /// Labels of all shards concatenated in shard order.
    pub fn concatenated_labels(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .flat_map(|a| a.labels().iter().copied())
            .collect()
    }
}

/// `Σ_n ‖centroid(a_n) − x_n‖²`.
pub fn kmeans_objective(features: &Matrix, c: &Centroids, a: &Assignment) -> Result<f64> {
    if features.cols() != c.dim() {
        return Err(Error::DimensionMismatch {
            context: "kmeans_objective features",
            expected: c.dim(),
            found: features.cols(),
        });
    }
    if features.rows() != a.len() {
        return Err(Error::DimensionMismatch {
            context: "kmeans_objective assignment",
            expected: features.rows(),
            found: a.len(),
        });
    }
    if a.k() > c.k() {
        return Err(Error::DimensionMismatch {
            context: "kmeans_objective clusters",
            expected: c.k(),
            found: a.k(),
        });
    }
    Ok(features
        .row_iter()
        .zip(a.labels())
        .map(|(x, &l)| squared_distance(x, c.centroid(l)))
        .sum())
}

/// Nearest centroid per row, using `‖x‖² − 2x·c + ‖c‖²` with cached
/// centroid norms. Ties go to the lowest index.
fn assign_rows(rows: &Matrix, centroids: &Matrix, centroid_norms: &[f64]) -> Vec<usize> {
    rows.row_iter()
        .map(|x| {
            let xx = dot(x, x);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &cc) in centroid_norms.iter().enumerate() {
                let d = xx - 2.0 * dot(x, centroids.row(j)) + cc;
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn centroid_norms(c: &Matrix) -> Vec<f64> {
    c.row_iter().map(|r| dot(r, r)).collect()
}

fn check_finite(m: &Matrix) -> Result<()> {
    match m.as_slice().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Re-seeds empty clusters until none is left.
///
/// `counts` are the global per-cluster sizes. For each empty cluster (lowest
/// index first) the largest cluster (lowest index on ties) donates a uniformly
/// drawn member: `donate(donor, rank)` must relabel the `rank`-th member of
/// `donor` in global row order to the empty cluster and return its features.
/// The empty cluster's centroid becomes that point plus a jitter of at most
/// [`REPAIR_PERTURBATION`] per coordinate. Returns whether anything changed.
fn repair_with<F>(counts: &mut [usize], centroids: &mut Matrix, rng: &mut Rng, mut donate: F) -> bool
where
    F: FnMut(usize, usize, usize) -> Vec<f64>,
{
    let mut repaired = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let mut donor = 0;
        for (j, &c) in counts.iter().enumerate() {
            if c > counts[donor] {
                donor = j;
            }
        }
        let rank = rng.below(counts[donor]);
        let point = donate(donor, rank, empty);
        for (c, p) in centroids.row_mut(empty).iter_mut().zip(point) {
            *c = p + REPAIR_PERTURBATION * rng.uniform_in(-1.0, 1.0);
        }
        counts[donor] -= 1;
        counts[empty] += 1;
        repaired = true;
    }
    repaired
}

/// Position of the `rank`-th row labelled `cluster`.
fn nth_member(labels: &[usize], cluster: usize, rank: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == cluster)
        .nth(rank)
        .map(|(i, _)| i)
        .expect("cluster count out of sync with labels")
}

/// Standalone empty-cluster repair: every cluster in `[0, k)` is non-empty on
/// return.
pub fn repair_empty_clusters(
    features: &Matrix,
    c: &Centroids,
    a: &Assignment,
    rng: &mut Rng,
) -> Result<(Centroids, Assignment)> {
    let k = c.k();
    if k > features.rows() {
        return Err(Error::TooFewPoints {
            points: features.rows(),
            clusters: k,
        });
    }
    if a.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "repair_empty_clusters",
            expected: features.rows(),
            found: a.len(),
        });
    }
    let mut counts = vec![0; k];
    for &l in a.labels() {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
        counts[l] += 1;
    }
    let mut labels = a.labels().to_vec();
    let mut centroids = c.0.clone();
    repair_with(&mut counts, &mut centroids, rng, |donor, rank, empty| {
        let i = nth_member(&labels, donor, rank);
        labels[i] = empty;
        features.row(i).to_vec()
    });
    Ok((Centroids(centroids), Assignment { labels, k }))
}

fn initial_centroids(rows_at: impl Fn(usize) -> Vec<f64>, n: usize, k: usize, d: usize, rng: &mut Rng) -> Matrix {
    let mut c = Matrix::zeros(k, d);
    for (j, i) in rng.sample_distinct(n, k).into_iter().enumerate() {
        c.row_mut(j).copy_from_slice(&rows_at(i));
    }
    c
}

fn max_movement(old: &Matrix, new: &Matrix) -> f64 {
    old.row_iter()
        .zip(new.row_iter())
        .map(|(a, b)| libm::sqrt(squared_distance(a, b)))
        .fold(0.0, f64::max)
}

/// Serial Lloyd k-means seeded with `k` distinct rows drawn uniformly.
pub fn kmeans_fit(features: &Matrix, cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    check_finite(features)?;
    if features.rows() < cfg.k {
        return Err(Error::TooFewPoints {
            points: features.rows(),
            clusters: cfg.k,
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let init = initial_centroids(
        |i| features.row(i).to_vec(),
        features.rows(),
        cfg.k,
        features.cols(),
        &mut rng,
    );
    lloyd_serial(features, init, cfg, &mut rng)
}

/// Serial Lloyd k-means from caller-supplied initial centroids.
pub fn kmeans_fit_from(features: &Matrix, init: &Centroids, cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    check_finite(features)?;
    check_finite(init.matrix())?;
    if init.k() != cfg.k || init.dim() != features.cols() {
        return Err(Error::DimensionMismatch {
            context: "kmeans_fit_from initial centroids",
            expected: cfg.k,
            found: init.k(),
        });
    }
    if features.rows() < cfg.k {
        return Err(Error::TooFewPoints {
            points: features.rows(),
            clusters: cfg.k,
        });
    }
    let mut rng = Rng::new(cfg.seed);
    lloyd_serial(features, init.0.clone(), cfg, &mut rng)
}

fn lloyd_serial(features: &Matrix, mut centroids: Matrix, cfg: &KMeansConfig, rng: &mut Rng) -> Result<KMeansFit> {
    let (k, d) = (cfg.k, features.cols());
    let mut history = Vec::new();
    let mut labels = Vec::new();
    let mut objective = 0.0;
    for _ in 0..cfg.max_iters {
        labels = assign_rows(features, &centroids, &centroid_norms(&centroids));
        let mut counts = vec![0; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let repaired = repair_with(&mut counts, &mut centroids, rng, |donor, rank, empty| {
            let i = nth_member(&labels, donor, rank);
            labels[i] = empty;
            features.row(i).to_vec()
        });

        let mut sums = Matrix::zeros(k, d);
        for (x, &l) in features.row_iter().zip(&labels) {
            for (s, &v) in sums.row_mut(l).iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut updated = Matrix::zeros(k, d);
        for j in 0..k {
            let n = counts[j] as f64;
            for (u, s) in updated.row_mut(j).iter_mut().zip(sums.row(j)) {
                *u = s / n;
            }
        }
        objective = 0.0;
        for (x, &l) in features.row_iter().zip(&labels) {
            objective += squared_distance(x, updated.row(l));
        }
        let movement = max_movement(&centroids, &updated);
        centroids = updated;
        history.push(IterationRecord {
            objective,
            movement,
            repaired,
        });
        if movement < cfg.tolerance {
            break;
        }
    }
    Ok(KMeansFit {
        centroids: Centroids(centroids),
        assignment: Assignment { labels, k },
        objective,
        history,
    })
}

/// k-means over row shards that exchange only [`ShardStats`].
///
/// Produces the same assignments as [`kmeans_fit`] on the concatenated shards
/// with the same seed; centroids differ only by summation order.
pub fn distributed_kmeans_fit(shards: &[Matrix], cfg: &KMeansConfig) -> Result<DistributedFit> {
    cfg.validate()?;
    let first = shards.first().ok_or(Error::NoShards)?;
    let d = first.cols();
    for s in shards {
        if s.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "distributed_kmeans_fit shard width",
                expected: d,
                found: s.cols(),
            });
        }
        check_finite(s)?;
    }
    let n: usize = shards.iter().map(Matrix::rows).sum();
    let k = cfg.k;
    if n < k {
        return Err(Error::TooFewPoints { points: n, clusters: k });
    }
    let global_row = |mut i: usize| -> Vec<f64> {
        for s in shards {
            if i < s.rows() {
                return s.row(i).to_vec();
            }
            i -= s.rows();
        }
        unreachable!("row index beyond total")
    };

    let mut rng = Rng::new(cfg.seed);
    let mut centroids = initial_centroids(global_row, n, k, d, &mut rng);
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); shards.len()];
    let mut history = Vec::new();
    let mut objective = 0.0;

    for _ in 0..cfg.max_iters {
        // shard-local assignment
        let norms = centroid_norms(&centroids);
        for (l, shard) in labels.iter_mut().zip(shards) {
            *l = assign_rows(shard, &centroids, &norms);
        }
        let local_counts: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| {
                let mut c = vec![0; k];
                l.iter().for_each(|&j| c[j] += 1);
                c
            })
            .collect();
        let mut counts = vec![0; k];
        for lc in &local_counts {
            for (c, x) in counts.iter_mut().zip(lc) {
                *c += x;
            }
        }
        // the donor's rank is global; locate the shard that holds it
        let mut shard_counts = local_counts;
        let repaired = repair_with(&mut counts, &mut centroids, &mut rng, |donor, mut rank, empty| {
            for (s, shard) in shards.iter().enumerate() {
                if rank < shard_counts[s][donor] {
                    let i = nth_member(&labels[s], donor, rank);
                    labels[s][i] = empty;
                    shard_counts[s][donor] -= 1;
                    shard_counts[s][empty] += 1;
                    return shard.row(i).to_vec();
                }
                rank -= shard_counts[s][donor];
            }
            unreachable!("donor rank exceeds cluster size")
        });

        // fixed-order reduction
        let mut total = ShardStats::zeros(k, d);
        for (shard, l) in shards.iter().zip(&labels) {
            total.merge(&ShardStats::compute(shard, l, k));
        }
        let mut updated = Matrix::zeros(k, d);
        for (j, mean) in total.means().into_iter().enumerate() {
            let mean = mean.expect("repair leaves no empty cluster");
            updated.row_mut(j).copy_from_slice(&mean);
        }
        objective = 0.0;
        for (shard, l) in shards.iter().zip(&labels) {
            let mut partial = 0.0;
            for (x, &j) in shard.row_iter().zip(l) {
                partial += squared_distance(x, updated.row(j));
            }
            objective += partial;
        }
        let movement = max_movement(&centroids, &updated);
        centroids = updated;
        history.push(IterationRecord {
            objective,
            movement,
            repaired,
        });
        if movement < cfg.tolerance {
            break;
        }
    }
    Ok(DistributedFit {
        centroids: Centroids(centroids),
        assignments: labels.into_iter().map(|labels| Assignment { labels, k }).collect(),
        objective,
        history,
    })
}

/// Splits rows into `parts` contiguous, near-equal shards (the first
/// `rows % parts` shards get one extra row). Shards may be empty when
/// `parts > rows`.
pub fn split_rows(features: &Matrix, parts: usize) -> Vec<Matrix> {
    let parts = parts.max(1);
    let n = features.rows();
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let idx: Vec<usize> = (start..start + len).collect();
            start += len;
            features.select_rows(&idx)
        })
        .collect()
}

/// Two-level partition: `m` coarse clusters crossed with the rotation
/// classes form the super-classes, and each coarse cluster is split into
/// `k` sub-clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPartition {
    m: usize,
    k: usize,
    rotations: Vec<RotationLabel>,
    coarse: Assignment,
    sub: Vec<usize>,
    coarse_centroids: Centroids,
    sub_centroids: Vec<Centroids>,
}

impl HierarchicalPartition {
    /// Assembles a partition from precomputed labels (e.g. read back from
    /// disk). Sub-centroids are optional and may be left empty.
    pub fn from_labels(
        m: usize,
        k: usize,
        rotations: Vec<RotationLabel>,
        coarse: Vec<usize>,
        sub: Vec<usize>,
    ) -> Result<Self> {
        if coarse.len() != sub.len() {
            return Err(Error::DimensionMismatch {
                context: "hierarchical partition labels",
                expected: coarse.len(),
                found: sub.len(),
            });
        }
        if let Some(&label) = sub.iter().find(|&&s| s >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        validate_rotations(&rotations)?;
        Ok(Self {
            m,
            k,
            rotations,
            coarse: Assignment::new(coarse, m)?,
            sub,
            coarse_centroids: Centroids(Matrix::zeros(0, 0)),
            sub_centroids: Vec::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rotations(&self) -> &[RotationLabel] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.sub.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub.is_empty()
    }

    /// `S = |rotations| · m`.
    pub fn num_super_classes(&self) -> usize {
        self.rotations.len() * self.m
    }

    /// Sub-classes inside one super-class.
    pub fn num_sub_classes(&self, _super_class: usize) -> usize {
        self.k
    }

    /// Distinct level-2 clusters, `m · k`. Rotations do not multiply this:
    /// the sub-clustering of a coarse cluster is shared by its rotations.
    pub fn total_sub_clusters(&self) -> usize {
        self.m * self.k
    }

    fn rotation_slot(&self, rotation: RotationLabel) -> Result<usize> {
        self.rotations
            .iter()
            .position(|&r| r == rotation)
            .ok_or(Error::LabelOutOfRange {
                label: rotation.index(),
                classes: self.rotations.len(),
            })
    }

    /// `r · m + c` for rotation slot `r` and coarse cluster `c`.
    pub fn super_label(&self, image: usize, rotation: RotationLabel) -> Result<usize> {
        Ok(self.rotation_slot(rotation)? * self.m + self.coarse.labels()[image])
    }

    /// Inverse of the super-label encoding.
    pub fn decode_super(&self, super_class: usize) -> (RotationLabel, usize) {
        (self.rotations[super_class / self.m], super_class % self.m)
    }

    /// Sub-class of the image within its own super-class.
    pub fn sub_label(&self, image: usize) -> usize {
        self.sub[image]
    }

    pub fn coarse_labels(&self) -> &[usize] {
        self.coarse.labels()
    }

    pub fn sub_labels(&self) -> &[usize] {
        &self.sub
    }

    /// Level-2 cluster id `c · k + j` per image.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.coarse
            .labels()
            .iter()
            .zip(&self.sub)
            .map(|(&c, &j)| c * self.k + j)
            .collect()
    }

    /// Images whose coarse cluster belongs to super-class `s`.
    pub fn super_class_members(&self, s: usize) -> Vec<usize> {
        let c = s % self.m;
        self.coarse
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn coarse_centroids(&self) -> &Centroids {
        &self.coarse_centroids
    }

    pub fn sub_centroids(&self) -> &[Centroids] {
        &self.sub_centroids
    }
}

fn validate_rotations(rotations: &[RotationLabel]) -> Result<()> {
    if rotations.is_empty() {
        return Err(Error::InvalidArgument("at least one rotation class is required".into()));
    }
    for (i, r) in rotations.iter().enumerate() {
        if rotations[..i].contains(r) {
            return Err(Error::InvalidArgument(format!(
                "rotation {}° listed twice",
                r.degrees()
            )));
        }
    }
    Ok(())
}

/// Hierarchical k-means over features of the non-rotated images.
pub fn hierarchical_fit(
    features: &Matrix,
    rotations: &[RotationLabel],
    m: usize,
    k: usize,
    cfg: &KMeansConfig,
) -> Result<HierarchicalPartition> {
    hierarchical_fit_sharded(features, rotations, m, k, cfg, 1)
}

/// [`hierarchical_fit`] with both levels run through
/// [`distributed_kmeans_fit`] over `shards` contiguous row shards.
/// `cfg.k` is ignored; `m` and `k` set the cluster counts. Sub-clustering of
/// coarse cluster `c` is seeded with `mix_seed(cfg.seed, c + 1)`.
pub fn hierarchical_fit_sharded(
    features: &Matrix,
    rotations: &[RotationLabel],
    m: usize,
    k: usize,
    cfg: &KMeansConfig,
    shards: usize,
) -> Result<HierarchicalPartition> {
    validate_rotations(rotations)?;
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "m and k must be positive, got m = {m}, k = {k}"
        )));
    }
    if shards == 0 {
        return Err(Error::NoShards);
    }
    let level1 = KMeansConfig { k: m, ..cfg.clone() };
    let coarse_fit = distributed_kmeans_fit(&split_rows(features, shards), &level1)?;
    let coarse = coarse_fit.concatenated_labels();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &c) in coarse.iter().enumerate() {
        members[c].push(i);
    }
    if let Some((cluster, idx)) = members.iter().enumerate().find(|(_, idx)| idx.len() < k) {
        return Err(Error::ClusterTooSmall {
            cluster,
            size: idx.len(),
            k,
        });
    }

    let mut sub = vec![0; features.rows()];
    let mut sub_centroids = Vec::with_capacity(m);
    for (c, idx) in members.iter().enumerate() {
        let subset = features.select_rows(idx);
        let level2 = KMeansConfig {
            k,
            seed: mix_seed(cfg.seed, c as u64 + 1),
            ..cfg.clone()
        };
        let fit = distributed_kmeans_fit(&split_rows(&subset, shards), &level2)?;
        for (&i, l) in idx.iter().zip(fit.concatenated_labels()) {
            sub[i] = l;
        }
        sub_centroids.push(fit.centroids);
    }
    Ok(HierarchicalPartition {
        m,
        k,
        rotations: rotations.to_vec(),
        coarse: Assignment { labels: coarse, k: m },
        sub,
        coarse_centroids: coarse_fit.centroids,
        sub_centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let x = random_matrix(6, 3, 1);
        let fit = kmeans_fit(&x, &KMeansConfig::new(6, 3)).unwrap();
        assert_eq!(fit.objective, 0.0);
        let mut labels = fit.assignment.labels().to_vec();
        labels.sort_unstable();
        assert_eq!(labels, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn k_one_is_global_mean() {
        let x = random_matrix(20, 2, 4);
        let fit = kmeans_fit(&x, &KMeansConfig::new(1, 0)).unwrap();
        let mean = x.column_means();
        for (a, b) in fit.centroids.centroid(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        let sst: f64 = x.row_iter().map(|r| squared_distance(r, &mean)).sum();
        assert!((fit.objective - sst).abs() < 1e-10);
    }

    #[test]
    fn separated_pairs() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [12.0, 10.0]]).unwrap();
        for seed in 0..10 {
            let fit = kmeans_fit(&x, &KMeansConfig::new(2, seed)).unwrap();
            let l = fit.assignment.labels();
            assert_eq!(l[0], l[1]);
            assert_eq!(l[2], l[3]);
            assert_ne!(l[0], l[2]);
            // within-pair variance: 2·0.5² + 2·1²
            assert!((fit.objective - 2.5).abs() < 1e-12);
            let c_far = fit.centroids.centroid(l[2]);
            assert_eq!(c_far, &[11.0, 10.0]);
        }
    }

    #[test]
    fn objective_examples() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [3.0, 1.0]]).unwrap();
        let c = Centroids(Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0]]).unwrap());
        let same = Assignment::new(vec![0, 0], 2).unwrap();
        assert_eq!(kmeans_objective(&x, &c, &same).unwrap(), 4.0);
        let c2 = Centroids(x.clone());
        let own = Assignment::new(vec![0, 1], 2).unwrap();
        assert_eq!(kmeans_objective(&x, &c2, &own).unwrap(), 0.0);
        let wrong = Matrix::zeros(2, 3);
        assert!(kmeans_objective(&wrong, &c, &same).is_err());
    }

    #[test]
    fn fit_errors() {
        let x = random_matrix(3, 2, 0);
        assert_eq!(
            kmeans_fit(&x, &KMeansConfig::new(4, 0)),
            Err(Error::TooFewPoints { points: 3, clusters: 4 })
        );
        assert!(distributed_kmeans_fit(&[], &KMeansConfig::new(1, 0)).is_err());
        let y = random_matrix(3, 3, 0);
        assert!(matches!(
            distributed_kmeans_fit(&[x, y], &KMeansConfig::new(2, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn repair_identity_without_empty_clusters() {
        let x = random_matrix(6, 2, 5);
        let c = Centroids(x.select_rows(&[0, 1]));
        let a = Assignment::new(vec![0, 1, 0, 1, 0, 1], 2).unwrap();
        let (c2, a2) = repair_empty_clusters(&x, &c, &a, &mut Rng::new(0)).unwrap();
        assert_eq!((c2, a2), (c, a));
    }

    #[test]
    fn repair_collapsed_identical_points() {
        let x = Matrix::from_rows(&[[1.0, 2.0]; 3]).unwrap();
        let c = Centroids(Matrix::from_rows(&[[1.0, 2.0], [5.0, 5.0], [6.0, 6.0]]).unwrap());
        let a = Assignment::new(vec![0, 0, 0], 3).unwrap();
        let (c2, a2) = repair_empty_clusters(&x, &c, &a, &mut Rng::new(1)).unwrap();
        assert_eq!(a2.counts(), vec![1, 1, 1]);
        for i in 0..3 {
            for j in 0..i {
                assert_ne!(c2.centroid(i), c2.centroid(j));
            }
        }
        // the fit also ends with three non-empty clusters
        let fit = kmeans_fit(&x, &KMeansConfig::new(3, 2)).unwrap();
        assert_eq!(fit.assignment.counts(), vec![1, 1, 1]);
    }

    #[test]
    fn repair_with_duplicate_and_k_equals_n() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        for seed in 0..20 {
            let fit = kmeans_fit(&x, &KMeansConfig::new(4, seed)).unwrap();
            assert_eq!(fit.assignment.counts(), vec![1; 4]);
        }
        let c = Centroids(Matrix::zeros(5, 2));
        let a = Assignment::new(vec![0; 4], 5).unwrap();
        assert!(matches!(
            repair_empty_clusters(&x, &c, &a, &mut Rng::new(0)),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn single_shard_is_bit_identical() {
        let x = random_matrix(300, 5, 9);
        let cfg = KMeansConfig::new(7, 13);
        let serial = kmeans_fit(&x, &cfg).unwrap();
        let dist = distributed_kmeans_fit(&[x.clone()], &cfg).unwrap();
        assert_eq!(serial.centroids, dist.centroids);
        assert_eq!(serial.assignment, dist.assignments[0]);
        assert_eq!(serial.objective.to_bits(), dist.objective.to_bits());
        assert_eq!(serial.history, dist.history);
    }

    #[test]
    fn uneven_and_empty_shards_match_serial() {
        let x = random_matrix(50, 3, 2);
        let cfg = KMeansConfig::new(4, 1);
        let serial = kmeans_fit(&x, &cfg).unwrap();
        let shards = vec![
            x.select_rows(&(0..7).collect::<Vec<_>>()),
            Matrix::zeros(0, 3),
            x.select_rows(&(7..50).collect::<Vec<_>>()),
        ];
        let dist = distributed_kmeans_fit(&shards, &cfg).unwrap();
        assert_eq!(dist.concatenated_labels(), serial.assignment.labels());
    }

    #[test]
    fn split_rows_covers_everything() {
        let x = random_matrix(10, 2, 0);
        let parts = split_rows(&x, 4);
        assert_eq!(parts.iter().map(Matrix::rows).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert_eq!(Matrix::vstack(&parts).unwrap(), x);
    }

    #[test]
    fn hierarchical_trivial() {
        let x = random_matrix(12, 2, 3);
        let p = hierarchical_fit(&x, &RotationLabel::ALL, 1, 1, &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(p.num_super_classes(), 4);
        assert!(p.sub_labels().iter().all(|&s| s == 0));
        for (r_idx, r) in RotationLabel::ALL.iter().enumerate() {
            assert_eq!(p.super_label(5, *r).unwrap(), r_idx);
        }
    }

    #[test]
    fn hierarchical_rejects_small_clusters() {
        let x = random_matrix(10, 2, 3);
        let err = hierarchical_fit(&x, &RotationLabel::ALL, 2, 8, &KMeansConfig::new(1, 0)).unwrap_err();
        assert!(matches!(err, Error::ClusterTooSmall { k: 8, .. }));
    }

    #[test]
    fn super_label_encoding_is_bijective() {
        let x = random_matrix(40, 2, 8);
        let m = 3;
        let p = hierarchical_fit(&x, &RotationLabel::ALL, m, 2, &KMeansConfig::new(1, 4)).unwrap();
        let mut seen = vec![false; 4 * m];
        for r in RotationLabel::ALL {
            for c in 0..m {
                let img = p.coarse_labels().iter().position(|&l| l == c).unwrap();
                let s = p.super_label(img, r).unwrap();
                assert!(!seen[s]);
                seen[s] = true;
                assert_eq!(p.decode_super(s), (r, c));
            }
        }
        assert!(seen.iter().all(|&b| b));
    }
}
