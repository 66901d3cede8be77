//! Synthetic single-channel image datasets with known classes.
//!
//! * `Blobs`: each class has a random prototype image; samples are the
//!   prototype plus Gaussian pixel noise, clamped to `[0, 1]`.
//! * `Edges`: each class is a soft step edge whose normal points at a
//!   class-specific angle inside the first quadrant, so the four rotated
//!   copies of any class land in four disjoint angular ranges.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::preprocess::{Dataset, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Blobs,
    Edges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub classes: usize,
    /// Pixel count per image; must be a perfect square with side ≥ 3.
    pub dims: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n: usize, classes: usize, dims: usize, seed: u64) -> Self {
        let noise = match kind {
            SynthKind::Blobs => 0.2,
            SynthKind::Edges => 0.05,
        };
        Self {
            kind,
            n,
            classes,
            dims,
            noise,
            seed,
        }
    }
}

fn square_side(dims: usize) -> Option<usize> {
    let side = libm::round(libm::sqrt(dims as f64)) as usize;
    (side * side == dims && side >= 3).then_some(side)
}

/// Generates the dataset. Labels are balanced (`i mod classes` before a
/// seeded shuffle) and stored as ground truth.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.n < spec.classes {
        return Err(Error::TooFewPoints {
            points: spec.n,
            clusters: spec.classes,
        });
    }
    let side = square_side(spec.dims).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "dims = {} is not the square of an integer ≥ 3",
            spec.dims
        ))
    })?;
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise {} < 0", spec.noise)));
    }
    let mut rng = Rng::new(spec.seed);
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);

    let images = match spec.kind {
        SynthKind::Blobs => {
            let prototypes: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| (0..spec.dims).map(|_| rng.uniform()).collect())
                .collect();
            labels
                .iter()
                .map(|&c| {
                    let px = prototypes[c]
                        .iter()
                        .map(|&p| (p + spec.noise * rng.normal()).clamp(0.0, 1.0))
                        .collect();
                    Image::new(1, side, side, px)
                })
                .collect::<Result<Vec<_>>>()?
        }
        SynthKind::Edges => {
            let sector = core::f64::consts::FRAC_PI_2 / spec.classes as f64;
            let centre = (side as f64 - 1.0) / 2.0;
            labels
                .iter()
                .map(|&c| {
                    let angle = (c as f64 + 0.5 + 0.3 * rng.uniform_in(-1.0, 1.0)) * sector;
                    let (sin, cos) = (libm::sin(angle), libm::cos(angle));
                    let offset = rng.uniform_in(-1.0, 1.0) * side as f64 / 8.0;
                    let mut px = Vec::with_capacity(spec.dims);
                    for y in 0..side {
                        for x in 0..side {
                            let dist = (x as f64 - centre) * cos + (y as f64 - centre) * sin - offset;
                            let v = 1.0 / (1.0 + libm::exp(-2.0 * dist));
                            px.push((v + spec.noise * rng.normal()).clamp(0.0, 1.0));
                        }
                    }
                    Image::new(1, side, side, px)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Dataset::new(images, Some(labels))
}
