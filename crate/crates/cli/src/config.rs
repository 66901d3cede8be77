//! Flat `key = value` run configuration.
//!
//! `#` starts a comment line. Every key may appear at most once and unknown
//! keys are rejected with their line number. Hyperparameter keys use the
//! field names of [`TrainConfig`] and its SGD settings (`dropout` for
//! `dropout_rate`); keys under `run.` name
//! files. Relative paths are resolved against the directory of the config
//! file, so a run manifest written with absolute paths can be replayed from
//! anywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deepercluster_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

/// Keys written into run manifests; accepted on input and otherwise ignored.
pub const ARTIFACT_KEYS: [&str; 6] = [
    "run.formats",
    "run.checkpoint",
    "run.coarse_labels",
    "run.sub_labels",
    "run.labels",
    "run.metrics",
];

const TRAIN_KEYS: [&str; 20] = [
    "m",
    "k",
    "reassign_period",
    "epochs",
    "num_worker_groups",
    "seed",
    "learning_rate",
    "momentum",
    "weight_decay",
    "dropout",
    "batch_size",
    "whitening",
    "whitening_dim",
    "whitening_epsilon",
    "refit_whitening",
    "sobel",
    "hidden",
    "feature_dim",
    "kmeans_iters",
    "kmeans_shards",
];

const RUN_KEYS: [&str; 3] = ["run.dataset", "run.truth", "run.warm_start"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// IMG1 dataset.
    pub dataset: PathBuf,
    /// IVEC1 ground-truth labels, only used for metrics.
    pub truth: Option<PathBuf>,
    /// Checkpoint whose feature extractor replaces the random initialisation.
    pub warm_start: Option<PathBuf>,
}

struct Entry {
    line: usize,
    value: String,
}

struct Parser<'a> {
    path: &'a Path,
    entries: BTreeMap<String, Entry>,
}

impl Parser<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| self.err(e.line, format!("`{key}`: cannot parse `{}` as {what}", e.value)))
    }

    fn set<T: std::str::FromStr>(&self, key: &str, what: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parse(key, what)? {
            *slot = v;
        }
        Ok(())
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.entries.get(key).map(|e| base.join(&e.value))
    }
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, train: TrainConfig) -> Self {
        Self {
            train,
            dataset: dataset.into(),
            truth: None,
            warm_start: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
            _ => CliError::io(path, e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// `path` only labels errors; relative file names are joined to `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut p = Parser {
            path,
            entries: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(p.err(line, format!("expected `key = value`, found `{trimmed}`")));
            };
            let key = key.trim();
            if !TRAIN_KEYS.contains(&key) && !RUN_KEYS.contains(&key) && !ARTIFACT_KEYS.contains(&key) {
                return Err(p.err(line, format!("unknown key `{key}`")));
            }
            if let Some(prev) = p.entries.get(key) {
                return Err(p.err(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
            }
            p.entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.trim().to_string(),
                },
            );
        }

        let mut t = TrainConfig::default();
        p.set("m", "an integer", &mut t.m)?;
        p.set("k", "an integer", &mut t.k)?;
        p.set("reassign_period", "an integer", &mut t.reassign_period)?;
        p.set("epochs", "an integer", &mut t.epochs)?;
        t.num_worker_groups = p.parse("num_worker_groups", "an integer")?.unwrap_or(4 * t.m);
        p.set("seed", "an unsigned integer", &mut t.seed)?;
        p.set("learning_rate", "a number", &mut t.sgd.learning_rate)?;
        p.set("momentum", "a number", &mut t.sgd.momentum)?;
        p.set("weight_decay", "a number", &mut t.sgd.weight_decay)?;
        p.set("dropout", "a number", &mut t.sgd.dropout_rate)?;
        p.set("batch_size", "an integer", &mut t.sgd.batch_size)?;
        p.set("whitening", "true or false", &mut t.whitening)?;
        if let Some(e) = p.entries.get("whitening_dim") {
            t.whitening_dim = match e.value.as_str() {
                "all" => None,
                v => Some(v.parse().map_err(|_| {
                    p.err(e.line, format!("`whitening_dim`: expected `all` or an integer, found `{v}`"))
                })?),
            };
        }
        p.set("whitening_epsilon", "a number", &mut t.whitening_epsilon)?;
        p.set("refit_whitening", "true or false", &mut t.refit_whitening)?;
        p.set("sobel", "true or false", &mut t.sobel)?;
        if let Some(e) = p.entries.get("hidden") {
            t.hidden = e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| p.err(e.line, format!("`hidden`: expected comma-separated integers, found `{}`", e.value)))?;
        }
        p.set("feature_dim", "an integer", &mut t.feature_dim)?;
        p.set("kmeans_iters", "an integer", &mut t.kmeans_iters)?;
        p.set("kmeans_shards", "an integer", &mut t.kmeans_shards)?;
        t.validate().map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;

        let dataset = p
            .path("run.dataset", base)
            .ok_or_else(|| CliError::Invalid(format!("{}: missing required key `run.dataset`", path.display())))?;
        Ok(Self {
            train: t,
            dataset,
            truth: p.path("run.truth", base),
            warm_start: p.path("run.warm_start", base),
        })
    }

    /// Every key with its effective value, in a fixed order; parsing the
    /// result gives back `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &t.sgd;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("run.dataset", &self.dataset.display());
        if let Some(p) = &self.truth {
            kv("run.truth", &p.display());
        }
        if let Some(p) = &self.warm_start {
            kv("run.warm_start", &p.display());
        }
        kv("seed", &t.seed);
        kv("m", &t.m);
        kv("k", &t.k);
        kv("reassign_period", &t.reassign_period);
        kv("epochs", &t.epochs);
        kv("num_worker_groups", &t.num_worker_groups);
        kv("learning_rate", &s.learning_rate);
        kv("momentum", &s.momentum);
        kv("weight_decay", &s.weight_decay);
        kv("dropout", &s.dropout_rate);
        kv("batch_size", &s.batch_size);
        kv("whitening", &t.whitening);
        match t.whitening_dim {
            Some(d) => kv("whitening_dim", &d),
            None => kv("whitening_dim", &"all"),
        }
        kv("whitening_epsilon", &t.whitening_epsilon);
        kv("refit_whitening", &t.refit_whitening);
        kv("sobel", &t.sobel);
        let hidden: Vec<String> = t.hidden.iter().map(ToString::to_string).collect();
        kv("hidden", &hidden.join(","));
        kv("feature_dim", &t.feature_dim);
        kv("kmeans_iters", &t.kmeans_iters);
        kv("kmeans_shards", &t.kmeans_shards);
        out
    }
}
