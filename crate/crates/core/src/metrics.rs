//! Evaluation of partitions and features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{log_softmax, softmax, Linear};
use crate::numerics::Matrix;
use crate::preprocess::Image;

/// Labels in `[0, num_classes)` for `N` items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    num_classes: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self { labels, num_classes })
    }

    /// `num_classes` is one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, num_classes }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_classes];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn entropy_of_counts<'a>(counts: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Normalised mutual information `I(a;b) / sqrt(H(a) H(b))`, natural logs.
///
/// If both partitions have a single occupied class the result is 1; if only
/// one of them does, it is 0.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "nmi",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let ca = a.sizes();
    let cb = b.sizes();
    let ha = entropy_of_counts(ca.iter(), n);
    let hb = entropy_of_counts(cb.iter(), n);
    match (ha == 0.0, hb == 0.0) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let c = c as f64;
            // p_xy log(p_xy / (p_x p_y)) with the n's folded in
            (c / n) * libm::log(c * n / (ca[x] as f64 * cb[y] as f64))
        })
        .sum();
    Ok((mi / libm::sqrt(ha * hb)).clamp(0.0, 1.0))
}

/// Entropy of the cluster-size distribution divided by `ln(num_classes)`;
/// 1 means perfectly balanced. A single-class partition counts as balanced.
pub fn balance_entropy(a: &Partition) -> f64 {
    if a.num_classes <= 1 || a.is_empty() {
        return 1.0;
    }
    entropy_of_counts(a.sizes().iter(), a.len() as f64) / libm::log(a.num_classes as f64)
}

/// Colour spread of each cluster: the root-mean-square distance between the
/// members' mean colours and the cluster's mean colour.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorStd {
    /// Indexed by cluster; `None` for clusters without members.
    pub per_cluster: Vec<Option<f64>>,
    /// Values of the non-empty clusters, ascending.
    pub sorted: Vec<f64>,
}

pub fn cluster_color_std(images: &[Image], a: &Partition) -> Result<ColorStd> {
    if images.len() != a.len() {
        return Err(Error::DimensionMismatch {
            context: "cluster_color_std",
            expected: a.len(),
            found: images.len(),
        });
    }
    let channels = images.first().map_or(0, Image::channels);
    let colors: Vec<Vec<f64>> = images.iter().map(Image::mean_color).collect();
    let mut sums = vec![vec![0.0; channels]; a.num_classes];
    let sizes = a.sizes();
    for (c, &l) in colors.iter().zip(&a.labels) {
        for (s, v) in sums[l].iter_mut().zip(c) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&sizes)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let mut sq = vec![0.0; a.num_classes];
    for (c, &l) in colors.iter().zip(&a.labels) {
        sq[l] += c
            .iter()
            .zip(&means[l])
            .map(|(x, m)| (x - m) * (x - m))
            .sum::<f64>();
    }
    let per_cluster: Vec<Option<f64>> = sq
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| (n > 0).then(|| libm::sqrt(s / n as f64)))
        .collect();
    let mut sorted: Vec<f64> = per_cluster.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    Ok(ColorStd { per_cluster, sorted })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Coefficient of `½‖W‖²` (bias excluded).
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression trained by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub classifier: Linear,
}

impl LogisticProbe {
    pub fn fit(features: &Matrix, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if !(cfg.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "probe learning rate must be positive, got {}",
                cfg.learning_rate
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "probe labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        let first = labels.first().copied();
        if first.is_none() || labels.iter().all(|&l| Some(l) == first) {
            return Err(Error::SingleClass);
        }
        let (n, d) = (features.rows(), features.cols());
        let mut cls = Linear::zeros(num_classes, d);
        let inv_n = 1.0 / n as f64;
        for _ in 0..cfg.epochs {
            let logits = cls.forward(features)?;
            let mut gw = Matrix::zeros(num_classes, d);
            let mut gb = vec![0.0; num_classes];
            for r in 0..n {
                let p = softmax(logits.row(r));
                let x = features.row(r);
                for (c, &pc) in p.iter().enumerate() {
                    let g = (pc - if c == labels[r] { 1.0 } else { 0.0 }) * inv_n;
                    gb[c] += g;
                    for (w, &xi) in gw.row_mut(c).iter_mut().zip(x) {
                        *w += g * xi;
                    }
                }
            }
            for (w, g) in cls.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= cfg.learning_rate * (g + cfg.l2 * *w);
            }
            for (b, g) in cls.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
        }
        Ok(Self { classifier: cls })
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Matrix> {
        let mut logits = self.classifier.forward(features)?;
        for r in 0..logits.rows() {
            let p = softmax(logits.row(r));
            logits.row_mut(r).copy_from_slice(&p);
        }
        Ok(logits)
    }

    /// Arg-max class per row (lowest index on ties).
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let logits = self.classifier.forward(features)?;
        Ok(logits
            .row_iter()
            .map(|row| {
                let lp = log_softmax(row);
                let mut best = 0;
                for (c, &v) in lp.iter().enumerate() {
                    if v > lp[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

/// Top-1 test accuracy of a logistic probe trained on `train` rows of frozen
/// `features`.
pub fn linear_probe(
    features: &Matrix,
    labels: &Partition,
    cfg: &ProbeConfig,
    train: &[usize],
    test: &[usize],
) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_probe",
            expected: labels.len(),
            found: features.rows(),
        });
    }
    let mut in_train = vec![false; features.rows()];
    for &i in train {
        in_train[i] = true;
    }
    if let Some(&i) = test.iter().find(|&&i| in_train[i]) {
        return Err(Error::InvalidArgument(format!(
            "row {i} is in both the training and the test split"
        )));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test split".into()));
    }
    let train_labels: Vec<usize> = train.iter().map(|&i| labels.labels[i]).collect();
    let probe = LogisticProbe::fit(&features.select_rows(train), &train_labels, labels.num_classes, cfg)?;
    let pred = probe.predict(&features.select_rows(test))?;
    let correct = pred
        .iter()
        .zip(test)
        .filter(|(&p, &i)| p == labels.labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}
