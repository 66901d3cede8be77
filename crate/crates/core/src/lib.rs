//! Core algorithms for learning image features from hierarchical k-means
//! pseudo-labels combined with a four-way rotation pretext task.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! configuration files and the command line live in the companion
//! `deepercluster` crate.
//!
//! Module map:
//!
//! * [`numerics`]: dense matrices, seeded randomness, PCA whitening and row
//!   normalisation.
//! * [`preprocess`]: Sobel filtering and lossless 90° rotations.
//! * [`synth`]: synthetic image datasets with known classes.
//! * [`clustering`]: serial and shard-distributed k-means, empty-cluster
//!   repair, and the two-level hierarchical partition.
//! * [`model`]: the MLP feature extractor, the hierarchical and flat losses,
//!   and SGD with momentum.
//! * [`trainer`]: the alternating cluster / train loop with simulated
//!   communication groups.
//! * [`metrics`]: NMI, balance entropy, colour deviation and a linear probe.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod clustering;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
