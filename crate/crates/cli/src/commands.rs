//! The four subcommands as library functions; the binary only parses flags
//! and prints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use deepercluster_core::clustering::{hierarchical_fit_sharded, HierarchicalPartition, KMeansConfig};
use deepercluster_core::metrics::{balance_entropy, cluster_color_std, linear_probe, nmi, Partition, ProbeConfig};
use deepercluster_core::model::FeatureNet;
use deepercluster_core::numerics::Matrix;
use deepercluster_core::preprocess::{input_dim, prepare_input, Dataset, RotationLabel};
use deepercluster_core::synth::{generate, SynthKind, SynthSpec};
use deepercluster_core::trainer::{initial_network, train_from, EpochMetrics, TrainOutcome, Trainer};

use crate::checkpoint::{model_to_checkpoint, network_from_checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{self, FORMAT_VERSIONS};

pub const MANIFEST: &str = "manifest.cfg";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const COARSE_LABELS: &str = "coarse.ivec1";
pub const SUB_LABELS: &str = "sub.ivec1";
/// Flat labels `c·k + j` over all `m·k` sub-clusters.
pub const LABELS: &str = "labels.ivec1";
pub const METRICS: &str = "metrics.csv";
pub const COARSE_CENTROIDS: &str = "coarse_centroids.fmat";
/// Sub-cluster centroids stacked in flat-label order.
pub const SUB_CENTROIDS: &str = "sub_centroids.fmat";

pub const METRICS_HEADER: &str = "epoch,mean_loss,balance_entropy,nmi_prev,nmi_truth";

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub kind: SynthKind,
    pub n: usize,
    pub classes: usize,
    pub dims: usize,
    /// Generator default when `None`.
    pub noise: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults to `out` with the extension `ivec1`.
    pub labels: Option<PathBuf>,
}

/// Writes the images and their labels, returning both paths.
pub fn gen_data(args: &GenDataArgs) -> Result<(PathBuf, PathBuf)> {
    let mut spec = SynthSpec::new(args.kind, args.n, args.classes, args.dims, args.seed);
    if let Some(noise) = args.noise {
        spec.noise = noise;
    }
    let data = generate(&spec).map_err(|e| CliError::Invalid(e.to_string()))?;
    let labels = args.labels.clone().unwrap_or_else(|| args.out.with_extension("ivec1"));
    formats::write_images(&args.out, &data.images)?;
    formats::write_labels(&labels, data.truth.as_deref().unwrap_or_default())?;
    Ok((args.out.clone(), labels))
}

pub fn load_dataset(images: &Path, truth: Option<&Path>) -> Result<Dataset> {
    let images = formats::read_images(images)?;
    let truth = truth.map(formats::read_labels).transpose()?;
    Dataset::new(images, truth).map_err(|e| CliError::format(PathBuf::from("dataset"), e.to_string()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.mean_loss,
            r.balance_entropy,
            fmt_opt(r.nmi_prev),
            fmt_opt(r.nmi_truth)
        );
    }
    out
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn write_partition(dir: &Path, part: &HierarchicalPartition) -> Result<()> {
    formats::write_labels(&dir.join(COARSE_LABELS), part.coarse_labels())?;
    formats::write_labels(&dir.join(SUB_LABELS), part.sub_labels())?;
    formats::write_labels(&dir.join(LABELS), &part.flat_labels())
}

/// The manifest text for `cfg`: the full configuration with absolute input
/// paths, followed by the artifact names inside the run directory.
pub fn manifest_text(cfg: &RunConfig) -> Result<String> {
    let cfg = RunConfig {
        dataset: absolute(&cfg.dataset)?,
        truth: cfg.truth.as_deref().map(absolute).transpose()?,
        warm_start: cfg.warm_start.as_deref().map(absolute).transpose()?,
        train: cfg.train.clone(),
    };
    let mut out = cfg.to_text();
    for (k, v) in [
        ("run.formats", FORMAT_VERSIONS),
        ("run.checkpoint", CHECKPOINT),
        ("run.coarse_labels", COARSE_LABELS),
        ("run.sub_labels", SUB_LABELS),
        ("run.labels", LABELS),
        ("run.metrics", METRICS),
    ] {
        let _ = writeln!(out, "{k} = {v}");
    }
    Ok(out)
}

/// Trains from `cfg` and fills `run_dir` with the manifest, the final
/// checkpoint, the last partition and the per-epoch metrics.
///
/// The manifest is written before training starts, so an aborted run still
/// records what was attempted.
pub fn train_run(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    let data = load_dataset(&cfg.dataset, cfg.truth.as_deref())?;
    let trainer = match &cfg.warm_start {
        Some(path) => {
            let net = network_from_checkpoint(&formats::read_checkpoint(path)?)
                .map_err(|e| CliError::format(path, e))?;
            Trainer::with_net(&data, cfg.train.clone(), net)?
        }
        None => Trainer::new(&data, cfg.train.clone())?,
    };
    fs::create_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
    formats::write_file(&run_dir.join(MANIFEST), manifest_text(cfg)?.as_bytes())?;

    let outcome = train_from(trainer)?;
    formats::write_checkpoint(&run_dir.join(CHECKPOINT), &model_to_checkpoint(&outcome.model()))?;
    write_partition(run_dir, outcome.partition())?;
    formats::write_file(&run_dir.join(METRICS), metrics_csv(&outcome.metrics).as_bytes())?;
    Ok(outcome)
}

pub fn train(config: &Path, run_dir: &Path) -> Result<TrainOutcome> {
    train_run(&RunConfig::load(config)?, run_dir)
}

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub features: PathBuf,
    pub m: usize,
    pub k: usize,
    pub shards: usize,
    pub seed: u64,
    pub iters: usize,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub partition: HierarchicalPartition,
    /// NMI of the flat labels against `--truth`.
    pub nmi_truth: Option<f64>,
}

/// Hierarchical k-means on stored features; writes label files and
/// centroids into `args.out`.
pub fn cluster(args: &ClusterArgs) -> Result<ClusterOutcome> {
    let x = formats::read_fmat(&args.features)?;
    let truth = args.truth.as_deref().map(formats::read_labels).transpose()?;
    if let Some(t) = &truth {
        if t.len() != x.rows() {
            return Err(CliError::format(
                args.truth.clone().unwrap(),
                format!("{} labels for {} feature rows", t.len(), x.rows()),
            ));
        }
    }
    let cfg = KMeansConfig {
        max_iters: args.iters,
        ..KMeansConfig::new(args.m, args.seed)
    };
    cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    let part = hierarchical_fit_sharded(&x, &RotationLabel::ALL, args.m, args.k, &cfg, args.shards)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_partition(&args.out, &part)?;
    formats::write_fmat(&args.out.join(COARSE_CENTROIDS), part.coarse_centroids().matrix())?;
    let mut stacked = Vec::new();
    for c in part.sub_centroids() {
        stacked.extend(c.matrix().row_iter().map(<[f64]>::to_vec));
    }
    formats::write_fmat(&args.out.join(SUB_CENTROIDS), &Matrix::from_rows(&stacked)?)?;

    let nmi_truth = match truth {
        Some(t) => Some(nmi(&Partition::from_labels(t), &Partition::from_labels(part.flat_labels()))?),
        None => None,
    };
    Ok(ClusterOutcome {
        partition: part,
        nmi_truth,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub nmi_truth: Option<f64>,
    pub nmi_reference: Option<f64>,
    pub balance_entropy: f64,
    /// Smallest, median and largest per-cluster colour deviation over the
    /// non-empty clusters.
    pub color_std_min: Option<f64>,
    pub color_std_median: Option<f64>,
    pub color_std_max: Option<f64>,
    /// Linear-probe test accuracy on features of the trained network.
    pub probe_trained: Option<f64>,
    /// The same probe on the network the run started from.
    pub probe_untrained: Option<f64>,
}

impl EvalReport {
    pub const HEADER: &'static str = "nmi_truth,nmi_reference,balance_entropy,color_std_min,color_std_median,\
color_std_max,probe_trained,probe_untrained";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{},{}\n",
            Self::HEADER,
            fmt_opt(self.nmi_truth),
            fmt_opt(self.nmi_reference),
            self.balance_entropy,
            fmt_opt(self.color_std_min),
            fmt_opt(self.color_std_median),
            fmt_opt(self.color_std_max),
            fmt_opt(self.probe_trained),
            fmt_opt(self.probe_untrained),
        )
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub run_dir: PathBuf,
    /// Ground-truth labels; without them the NMI-vs-truth and probe columns
    /// stay empty.
    pub truth: Option<PathBuf>,
    /// Another IVEC1 partition to compare the run's flat labels with.
    pub reference: Option<PathBuf>,
    pub probe: ProbeConfig,
}

impl EvalArgs {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            truth: None,
            reference: None,
            probe: ProbeConfig::default(),
        }
    }
}

/// Frozen features of the non-rotated images.
fn frozen_features(net: &FeatureNet, data: &Dataset, sobel: bool) -> Result<Matrix> {
    let rows = data
        .images
        .iter()
        .map(|img| prepare_input(img, RotationLabel::R0, sobel))
        .collect::<deepercluster_core::Result<Vec<_>>>()?;
    Ok(net.forward(&Matrix::from_rows(&rows)?)?)
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let dir = &args.run_dir;
    let cfg = RunConfig::load(&dir.join(MANIFEST))?;
    let labels = formats::read_labels(&dir.join(LABELS))?;
    let ckpt_path = dir.join(CHECKPOINT);
    let trained = network_from_checkpoint(&formats::read_checkpoint(&ckpt_path)?)
        .map_err(|e| CliError::format(&ckpt_path, e))?;
    let data = load_dataset(&cfg.dataset, None)?;
    if labels.len() != data.len() {
        return Err(CliError::format(
            dir.join(LABELS),
            format!("{} labels for {} images", labels.len(), data.len()),
        ));
    }
    let num_clusters = cfg.train.m * cfg.train.k;
    let part = Partition::new(labels, num_clusters)?;

    let mut report = EvalReport {
        balance_entropy: balance_entropy(&part),
        ..EvalReport::default()
    };
    let curve = cluster_color_std(&data.images, &part)?.sorted;
    if !curve.is_empty() {
        report.color_std_min = curve.first().copied();
        report.color_std_median = Some(curve[curve.len() / 2]);
        report.color_std_max = curve.last().copied();
    }
    if let Some(path) = &args.reference {
        let reference = formats::read_labels(path)?;
        report.nmi_reference = Some(nmi(&Partition::from_labels(reference), &part)?);
    }
    if let Some(path) = &args.truth {
        let truth = formats::read_labels(path)?;
        if truth.len() != data.len() {
            return Err(CliError::format(path, format!("{} labels for {} images", truth.len(), data.len())));
        }
        let truth = Partition::from_labels(truth);
        report.nmi_truth = Some(nmi(&truth, &part)?);

        // first half trains the probe, second half tests it
        let half = data.len() / 2;
        let train: Vec<usize> = (0..half).collect();
        let test: Vec<usize> = (half..data.len()).collect();
        let (c, h, w) = data.shape().expect("non-empty dataset");
        let untrained = initial_network(&cfg.train, input_dim(c, h, w, cfg.train.sobel))?;
        for (net, slot) in [(&trained, &mut report.probe_trained), (&untrained, &mut report.probe_untrained)] {
            let f = frozen_features(net, &data, cfg.train.sobel)?;
            *slot = Some(linear_probe(&f, &truth, &args.probe, &train, &test)?);
        }
    }
    Ok(report)
}
