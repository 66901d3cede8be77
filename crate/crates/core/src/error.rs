use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("degenerate covariance: all {dims} features are constant")]
    DegenerateCovariance { dims: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{points} points cannot fill {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("coarse cluster {cluster} has {size} members, fewer than k = {k}; use a smaller k")]
    ClusterTooSmall { cluster: usize, size: usize, k: usize },
    #[error("no shards given")]
    NoShards,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },
    #[error("image of {height}x{width} is too small, need at least 3x3")]
    ImageTooSmall { height: usize, width: usize },
    #[error("unsupported channel count {0}, expected 1 or 3")]
    UnsupportedChannels(usize),
    #[error("loss became non-finite during epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training set contains a single class")]
    SingleClass,
}
