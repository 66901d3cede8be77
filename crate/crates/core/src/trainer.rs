//! The alternating loop: extract features of the non-rotated images, cluster
//! them hierarchically every `T` epochs, and in between train the network on
//! the resulting super-class / sub-class targets.
//!
//! Training is organised in one communication group per super-class. Every
//! group holds its own replica of the shared feature extractor and of `V`,
//! plus the private sub-classifier `W_s`. For each batch the groups compute
//! gradients on their share of the batch; the shared gradients are summed in
//! ascending group order and every group applies the same update to its
//! replica, while `W_s` is updated from its group's gradient alone.

use alloc::vec;
use alloc::vec::Vec;

use crate::clustering::{hierarchical_fit_sharded, HierarchicalPartition, KMeansConfig};
use crate::error::{Error, Result};
use crate::metrics::{balance_entropy, nmi, Partition};
use crate::model::{
    group_loss, sgd_step, Classifiers, Dropout, FeatureNet, HierTarget, Linear, Model, Momentum,
    Parameters, SgdConfig, CLASSIFIER_INIT_STD,
};
use crate::numerics::{
    apply_whitening, fit_whitening, l2_normalize_rows, mix_seed, Matrix, Rng, WhiteningTransform,
    DEFAULT_WHITENING_EPSILON,
};
use crate::preprocess::{prepare_input, Dataset, RotationLabel};

// seed streams
const NET_STREAM: u64 = 1;
const V_STREAM: u64 = 2;
const REASSIGN_STREAM: u64 = 3;
const W_STREAM: u64 = 4;
const EPOCH_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Coarse (level-1) clusters.
    pub m: usize,
    /// Sub-clusters per coarse cluster.
    pub k: usize,
    /// Epochs between re-clusterings.
    pub reassign_period: usize,
    pub epochs: usize,
    /// Must equal `4 m`.
    pub num_worker_groups: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub whitening: bool,
    /// Keep this many principal components when whitening (`None`: all).
    pub whitening_dim: Option<usize>,
    pub whitening_epsilon: f64,
    /// Refit the whitening at every reassignment rather than only the first.
    pub refit_whitening: bool,
    pub sobel: bool,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub kmeans_iters: usize,
    /// Row shards used by the distributed k-means.
    pub kmeans_shards: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 4,
            k: 4,
            reassign_period: 3,
            epochs: 30,
            num_worker_groups: 16,
            sgd: SgdConfig::default(),
            seed: 0,
            whitening: true,
            whitening_dim: None,
            whitening_epsilon: DEFAULT_WHITENING_EPSILON,
            refit_whitening: true,
            sobel: true,
            hidden: vec![64],
            feature_dim: 32,
            kmeans_iters: 10,
            kmeans_shards: 1,
        }
    }
}

impl TrainConfig {
    pub fn num_super_classes(&self) -> usize {
        RotationLabel::ALL.len() * self.m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.k == 0 {
            return bad(alloc::format!("m and k must be positive (m = {}, k = {})", self.m, self.k));
        }
        if self.reassign_period == 0 {
            return bad("reassign_period must be at least 1".into());
        }
        if self.num_worker_groups != self.num_super_classes() {
            return bad(alloc::format!(
                "num_worker_groups must equal 4m = {}, got {}",
                self.num_super_classes(),
                self.num_worker_groups
            ));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        if let Some(p) = self.whitening_dim {
            if p == 0 || p > self.feature_dim {
                return bad(alloc::format!(
                    "whitening_dim {p} must lie in 1..={}",
                    self.feature_dim
                ));
            }
        }
        if !(self.whitening_epsilon > 0.0) {
            return bad("whitening_epsilon must be positive".into());
        }
        if self.kmeans_iters == 0 || self.kmeans_shards == 0 {
            return bad("kmeans_iters and kmeans_shards must be positive".into());
        }
        self.sgd.validate()
    }
}

/// Parameters every group holds an identical copy of.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedReplica {
    pub net: FeatureNet,
    pub v: Linear,
    pub net_momentum: Momentum,
    pub v_momentum: Momentum,
}

/// One communication group: a super-class, its images and its private
/// sub-classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub id: usize,
    pub rotation: RotationLabel,
    pub coarse_cluster: usize,
    /// Images of this group's coarse cluster, ascending.
    pub members: Vec<usize>,
    pub shared: SharedReplica,
    pub w: Linear,
    pub w_momentum: Momentum,
}

/// One sampled training item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub image: usize,
    pub rotation: RotationLabel,
    pub target: HierTarget,
    pub dropout_seed: u64,
}

/// Draws a (super-class, sub-class) slot uniformly among the non-empty ones,
/// then a member of that slot uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSampler {
    slots: Vec<(HierTarget, Vec<usize>)>,
}

impl ClusterSampler {
    pub fn new(part: &HierarchicalPartition) -> Self {
        let (m, k) = (part.m(), part.k());
        let mut members = vec![Vec::new(); m * k];
        for (i, (&c, &j)) in part.coarse_labels().iter().zip(part.sub_labels()).enumerate() {
            members[c * k + j].push(i);
        }
        let mut slots = Vec::new();
        for s in 0..part.num_super_classes() {
            let (_, c) = part.decode_super(s);
            for j in 0..k {
                let imgs = &members[c * k + j];
                if !imgs.is_empty() {
                    slots.push((HierTarget { super_class: s, sub_class: j }, imgs.clone()));
                }
            }
        }
        Self { slots }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, i: usize) -> (HierTarget, &[usize]) {
        (self.slots[i].0, &self.slots[i].1)
    }

    /// `(slot index, image)`.
    pub fn sample(&self, rng: &mut Rng) -> (usize, usize) {
        let s = rng.below(self.slots.len());
        let members = &self.slots[s].1;
        (s, members[rng.below(members.len())])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean per-item loss of each group; `None` if the group saw no items.
    pub group_losses: Vec<Option<f64>>,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub balance_entropy: f64,
    /// NMI against the previous partition, on epochs that re-clustered.
    pub nmi_prev: Option<f64>,
    pub nmi_truth: Option<f64>,
}

/// Network inputs (rotated, optionally Sobel-filtered) for every image under
/// every rotation, indexed `[rotation][image]`.
fn build_inputs(dataset: &Dataset, sobel: bool) -> Result<Vec<Matrix>> {
    RotationLabel::ALL
        .iter()
        .map(|&r| {
            let rows: Vec<Vec<f64>> = dataset
                .images
                .iter()
                .map(|img| prepare_input(img, r, sobel))
                .collect::<Result<_>>()?;
            Matrix::from_rows(&rows)
        })
        .collect()
}

/// Features of the non-rotated images, whitened (if configured) with a
/// transform fitted on them, and ℓ2-normalised, in dataset order.
pub fn extract_all_features(net: &FeatureNet, dataset: &Dataset, cfg: &TrainConfig) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = dataset
        .images
        .iter()
        .map(|img| prepare_input(img, RotationLabel::R0, cfg.sobel))
        .collect::<Result<_>>()?;
    let raw = net.forward(&Matrix::from_rows(&rows)?)?;
    let feats = if cfg.whitening && raw.rows() >= 2 {
        let t = fit_whitening(&raw, cfg.whitening_dim, cfg.whitening_epsilon)?;
        apply_whitening(&t, &raw)?
    } else {
        raw
    };
    Ok(l2_normalize_rows(&feats))
}

/// The freshly initialised feature extractor a run with `cfg` starts from.
pub fn initial_network(cfg: &TrainConfig, input_dim: usize) -> Result<FeatureNet> {
    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(cfg.feature_dim);
    FeatureNet::new(&sizes, &mut Rng::new(cfg.seed).fork(NET_STREAM))
}

#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    inputs: Vec<Matrix>,
    truth: Option<Vec<usize>>,
    template: SharedReplica,
    groups: Vec<GroupState>,
    partition: Option<HierarchicalPartition>,
    previous: Option<HierarchicalPartition>,
    sampler: Option<ClusterSampler>,
    whitening: Option<WhiteningTransform>,
    reassignments: u64,
}

impl Trainer {
    pub fn new(dataset: &Dataset, cfg: TrainConfig) -> Result<Self> {
        let (c, h, w) = dataset
            .shape()
            .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let net = initial_network(&cfg, crate::preprocess::input_dim(c, h, w, cfg.sobel))?;
        Self::with_net(dataset, cfg, net)
    }

    /// Starts from a given feature extractor (e.g. a pretrained one).
    pub fn with_net(dataset: &Dataset, cfg: TrainConfig, net: FeatureNet) -> Result<Self> {
        cfg.validate()?;
        let (c, h, w) = dataset
            .shape()
            .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let expected = crate::preprocess::input_dim(c, h, w, cfg.sobel);
        if net.input_dim() != expected || net.feature_dim() != cfg.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "network shape",
                expected,
                found: net.input_dim(),
            });
        }
        let inputs = build_inputs(dataset, cfg.sobel)?;
        let v = Linear::gaussian(
            cfg.num_super_classes(),
            cfg.feature_dim,
            CLASSIFIER_INIT_STD,
            &mut Rng::new(cfg.seed).fork(V_STREAM),
        );
        Ok(Self {
            inputs,
            truth: dataset.truth.clone(),
            template: SharedReplica {
                net,
                v,
                net_momentum: Momentum::new(),
                v_momentum: Momentum::new(),
            },
            groups: Vec::new(),
            partition: None,
            previous: None,
            sampler: None,
            whitening: None,
            reassignments: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.inputs[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn groups(&self) -> &[GroupState] {
        &self.groups
    }

    pub fn partition(&self) -> Option<&HierarchicalPartition> {
        self.partition.as_ref()
    }

    pub fn previous_partition(&self) -> Option<&HierarchicalPartition> {
        self.previous.as_ref()
    }

    pub fn sampler(&self) -> Option<&ClusterSampler> {
        self.sampler.as_ref()
    }

    /// Inputs of all images under `rotation`, one row per image.
    pub fn inputs(&self, rotation: RotationLabel) -> &Matrix {
        &self.inputs[rotation.index()]
    }

    /// The shared parameters (group 0's replica once groups exist).
    pub fn shared(&self) -> &SharedReplica {
        self.groups.first().map_or(&self.template, |g| &g.shared)
    }

    /// Whether every group's copy of the shared parameters is bit-identical.
    pub fn replicas_identical(&self) -> bool {
        let bits = |r: &SharedReplica| -> Vec<u64> {
            let mut out = Vec::new();
            for (_, v) in r.net.blocks().into_iter().chain(r.v.blocks()) {
                out.extend(v.iter().map(|x| x.to_bits()));
            }
            out
        };
        match self.groups.first() {
            None => true,
            Some(g0) => {
                let reference = bits(&g0.shared);
                self.groups.iter().all(|g| bits(&g.shared) == reference)
            }
        }
    }

    /// Assembles the full model (shared parameters plus every `W_s`).
    pub fn model(&self) -> Model {
        let shared = self.shared().clone();
        let s = self.cfg.num_super_classes();
        let (w, w_momentum) = if self.groups.is_empty() {
            (
                vec![Linear::zeros(self.cfg.k, self.cfg.feature_dim); s],
                vec![Momentum::new(); s],
            )
        } else {
            (
                self.groups.iter().map(|g| g.w.clone()).collect(),
                self.groups.iter().map(|g| g.w_momentum.clone()).collect(),
            )
        };
        Model {
            net: shared.net,
            classifiers: Classifiers { v: shared.v, w },
            net_momentum: shared.net_momentum,
            v_momentum: shared.v_momentum,
            w_momentum,
        }
    }

    /// Clustering features under the current shared network: non-rotated
    /// inputs, no dropout, whitening (refit or reused per configuration),
    /// row ℓ2 normalisation.
    pub fn extract_features(&mut self) -> Result<Matrix> {
        let raw = self.shared().net.forward(&self.inputs[0])?;
        let feats = if self.cfg.whitening {
            if self.cfg.refit_whitening || self.whitening.is_none() {
                self.whitening = Some(fit_whitening(
                    &raw,
                    self.cfg.whitening_dim,
                    self.cfg.whitening_epsilon,
                )?);
            }
            apply_whitening(self.whitening.as_ref().expect("fitted above"), &raw)?
        } else {
            raw
        };
        Ok(l2_normalize_rows(&feats))
    }

    /// Re-clusters the current features and rebuilds the groups and the
    /// sampler. `W_s` are re-initialised; the shared parameters carry over.
    pub fn reassign(&mut self) -> Result<&HierarchicalPartition> {
        let features = self.extract_features()?;
        // same k-means seed every round: similar features then give similarly
        // numbered clusters, which the retained V relies on
        let kcfg = KMeansConfig {
            k: self.cfg.m,
            max_iters: self.cfg.kmeans_iters,
            seed: mix_seed(self.cfg.seed, REASSIGN_STREAM),
            tolerance: 1e-7,
        };
        let part = hierarchical_fit_sharded(
            &features,
            &RotationLabel::ALL,
            self.cfg.m,
            self.cfg.k,
            &kcfg,
            self.cfg.kmeans_shards,
        )?;
        self.install_partition(part)?;
        Ok(self.partition.as_ref().expect("just set"))
    }

    /// Makes `part` the current partition: rebuilds the groups and the
    /// sampler and re-initialises every `W_s`.
    pub fn install_partition(&mut self, part: HierarchicalPartition) -> Result<()> {
        if part.len() != self.len()
            || part.m() != self.cfg.m
            || part.k() != self.cfg.k
            || part.rotations() != RotationLabel::ALL
        {
            return Err(Error::InvalidArgument(alloc::format!(
                "partition of {} images with m = {}, k = {} does not fit this trainer",
                part.len(),
                part.m(),
                part.k()
            )));
        }
        let round = self.reassignments;
        if let Some(g) = self.groups.first() {
            self.template = g.shared.clone();
        }
        let w_root = Rng::new(mix_seed(self.cfg.seed, mix_seed(W_STREAM, round)));
        self.groups = (0..part.num_super_classes())
            .map(|s| {
                let (rotation, coarse_cluster) = part.decode_super(s);
                GroupState {
                    id: s,
                    rotation,
                    coarse_cluster,
                    members: part.super_class_members(s),
                    shared: self.template.clone(),
                    w: Linear::gaussian(
                        self.cfg.k,
                        self.cfg.feature_dim,
                        CLASSIFIER_INIT_STD,
                        &mut w_root.fork(s as u64),
                    ),
                    w_momentum: Momentum::new(),
                }
            })
            .collect();
        self.sampler = Some(ClusterSampler::new(&part));
        self.previous = self.partition.replace(part);
        self.reassignments += 1;
        Ok(())
    }

    /// Batches of epoch `epoch`: `max(1, N / batch_size)` batches of
    /// `batch_size` sampled items each.
    pub fn epoch_plan(&self, epoch: usize) -> Result<Vec<Vec<BatchItem>>> {
        let sampler = self
            .sampler
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no partition yet; call reassign first".into()))?;
        let bs = self.cfg.sgd.batch_size;
        let batches = (self.len() / bs).max(1);
        let mut rng = Rng::new(mix_seed(self.cfg.seed, mix_seed(EPOCH_STREAM, epoch as u64)));
        let part = self.partition.as_ref().expect("sampler implies partition");
        Ok((0..batches)
            .map(|_| {
                (0..bs)
                    .map(|_| {
                        let (slot, image) = sampler.sample(&mut rng);
                        let (target, _) = sampler.slot(slot);
                        BatchItem {
                            image,
                            rotation: part.decode_super(target.super_class).0,
                            target,
                            dropout_seed: rng.next_u64(),
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Group-parallel SGD over one epoch of sampled batches.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        let plan = self.epoch_plan(epoch)?;
        let cfg = self.cfg.sgd.clone();
        let s_count = self.groups.len();
        let mut loss_sum = 0.0;
        let mut group_sum = vec![0.0; s_count];
        let mut group_items = vec![0usize; s_count];
        for batch in &plan {
            let scale = 1.0 / batch.len() as f64;
            let mut net_total = self.groups[0].shared.net.zeros_like();
            let mut v_total = self.groups[0].shared.v.zeros_like();
            let mut w_grads = Vec::with_capacity(s_count);
            let mut batch_loss = 0.0;
            for g in &self.groups {
                let rows: Vec<&BatchItem> = batch.iter().filter(|it| it.target.super_class == g.id).collect();
                if rows.is_empty() {
                    w_grads.push(g.w.zeros_like());
                    continue;
                }
                let idx: Vec<usize> = rows.iter().map(|it| it.image).collect();
                let inputs = self.inputs[g.rotation.index()].select_rows(&idx);
                let seeds: Vec<u64> = rows.iter().map(|it| it.dropout_seed).collect();
                let subs: Vec<usize> = rows.iter().map(|it| it.target.sub_class).collect();
                let dropout = (cfg.dropout_rate > 0.0).then_some(Dropout {
                    rate: cfg.dropout_rate,
                    row_seeds: &seeds,
                });
                let cache = g.shared.net.forward_train(&inputs, dropout)?;
                let gl = group_loss(&g.shared.v, &g.w, g.id, &cache.output, &subs, scale)?;
                let net_grad = g.shared.net.backward(&cache, &gl.features)?;
                add_into(&mut net_total, &net_grad);
                add_into(&mut v_total, &gl.v);
                batch_loss += gl.loss;
                group_sum[g.id] += gl.loss / scale;
                group_items[g.id] += rows.len();
                w_grads.push(gl.w);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += batch_loss;
            for (g, wg) in self.groups.iter_mut().zip(&w_grads) {
                sgd_step(&mut g.shared.net, &net_total, &cfg, &mut g.shared.net_momentum, "net.")?;
                sgd_step(&mut g.shared.v, &v_total, &cfg, &mut g.shared.v_momentum, "v.")?;
                sgd_step(&mut g.w, wg, &cfg, &mut g.w_momentum, &alloc::format!("w{}.", g.id))?;
            }
        }
        Ok(EpochStats {
            epoch,
            mean_loss: loss_sum / plan.len() as f64,
            group_losses: group_sum
                .iter()
                .zip(&group_items)
                .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
                .collect(),
        })
    }

    /// Flat level-2 labels of the current partition.
    fn flat_partition(&self) -> Option<Partition> {
        self.partition.as_ref().map(|p| {
            Partition::new(p.flat_labels(), p.total_sub_clusters()).expect("labels within m*k")
        })
    }

    fn epoch_metrics(&self, epoch: usize, mean_loss: f64, reassigned: bool) -> Result<EpochMetrics> {
        let current = self.flat_partition().expect("partition exists");
        let nmi_prev = match (&self.previous, reassigned) {
            (Some(prev), true) => Some(nmi(&Partition::from_labels(prev.flat_labels()), &current)?),
            _ => None,
        };
        let nmi_truth = match &self.truth {
            Some(t) => Some(nmi(&Partition::from_labels(t.clone()), &current)?),
            None => None,
        };
        Ok(EpochMetrics {
            epoch,
            mean_loss,
            balance_entropy: balance_entropy(&current),
            nmi_prev,
            nmi_truth,
        })
    }
}

fn add_into<P: Parameters>(acc: &mut P, other: &P) {
    for (a, (_, b)) in acc.blocks_mut().into_iter().zip(other.blocks()) {
        for (x, y) in a.values.iter_mut().zip(b) {
            *x += y;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn model(&self) -> Model {
        self.trainer.model()
    }

    pub fn partition(&self) -> &HierarchicalPartition {
        self.trainer.partition().expect("train always clusters once")
    }
}

/// Runs the full loop: cluster before epochs `0, T, 2T, ...`, one SGD epoch
/// per epoch. With `epochs = 0` only the initial clustering happens.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(Trainer::new(dataset, cfg.clone())?)
}

/// [`train`] starting from a prepared trainer (e.g. warm-started).
pub fn train_from(mut trainer: Trainer) -> Result<TrainOutcome> {
    let cfg = trainer.cfg.clone();
    trainer.reassign()?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let reassigned = epoch > 0 && epoch % cfg.reassign_period == 0;
        if reassigned {
            trainer.reassign()?;
        }
        let stats = trainer.run_epoch(epoch)?;
        metrics.push(trainer.epoch_metrics(epoch, stats.mean_loss, reassigned)?);
    }
    Ok(TrainOutcome { trainer, metrics })
}
