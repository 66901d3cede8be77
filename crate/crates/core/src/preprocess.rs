//! Image-space transforms applied before the feature extractor: the 2-channel
//! Sobel gradient filter and the four lossless rotations of the pretext task.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Channel-major image (`pixels[c][y][x]` flattened).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "{} pixels given for a {channels}x{height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(index) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            pixels: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.pixels[c * plane..(c + 1) * plane]
    }

    /// Per-channel mean intensity.
    pub fn mean_color(&self) -> Vec<f64> {
        let plane = (self.height * self.width).max(1) as f64;
        (0..self.channels)
            .map(|c| self.channel(c).iter().sum::<f64>() / plane)
            .collect()
    }

    /// Unweighted mean of the channels.
    pub fn luminance(&self) -> Image {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane];
        for c in 0..self.channels {
            for (o, &p) in out.iter_mut().zip(self.channel(c)) {
                *o += p;
            }
        }
        let n = self.channels.max(1) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            pixels: out,
        }
    }

    pub fn negated(&self) -> Image {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|p| *p = -*p);
        out
    }
}

/// A collection of images with optional ground-truth class labels. Labels are
/// only ever read by evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub truth: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, truth: Option<Vec<usize>>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.len() != images.len() {
                return Err(Error::DimensionMismatch {
                    context: "dataset labels",
                    expected: images.len(),
                    found: t.len(),
                });
            }
        }
        if let Some(first) = images.first() {
            let shape = (first.channels, first.height, first.width);
            if let Some(bad) = images
                .iter()
                .position(|i| (i.channels, i.height, i.width) != shape)
            {
                return Err(Error::InvalidArgument(format!(
                    "image {bad} has a different shape than image 0"
                )));
            }
        }
        Ok(Self { images, truth })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(channels, height, width)` of the images, if any.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|i| (i.channels, i.height, i.width))
    }

    /// Dataset reordered by `order` (image `i` of the result is image
    /// `order[i]` of `self`).
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        Dataset {
            images: order.iter().map(|&i| self.images[i].clone()).collect(),
            truth: self
                .truth
                .as_ref()
                .map(|t| order.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// One of the four rotation classes of the pretext task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RotationLabel(u8);

impl RotationLabel {
    pub const R0: RotationLabel = RotationLabel(0);
    pub const R90: RotationLabel = RotationLabel(1);
    pub const R180: RotationLabel = RotationLabel(2);
    pub const R270: RotationLabel = RotationLabel(3);
    pub const ALL: [RotationLabel; 4] = [Self::R0, Self::R90, Self::R180, Self::R270];

    pub fn new(class_index: usize) -> Result<Self> {
        if class_index < 4 {
            Ok(RotationLabel(class_index as u8))
        } else {
            Err(Error::LabelOutOfRange {
                label: class_index,
                classes: 4,
            })
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn degrees(self) -> u32 {
        self.0 as u32 * 90
    }

    /// The rotation that undoes this one.
    pub fn inverse(self) -> Self {
        RotationLabel((4 - self.0) % 4)
    }
}

/// Rotates counter-clockwise by the label's angle. Exact pixel permutation;
/// 90° and 270° swap height and width.
pub fn rotate(img: &Image, label: RotationLabel) -> Image {
    let (h, w) = (img.height, img.width);
    let (oh, ow) = match label.0 {
        1 | 3 => (w, h),
        _ => (h, w),
    };
    let mut out = Image::filled(img.channels, oh, ow, 0.0);
    for c in 0..img.channels {
        for i in 0..oh {
            for j in 0..ow {
                let v = match label.0 {
                    0 => img.at(c, i, j),
                    1 => img.at(c, j, w - 1 - i),
                    2 => img.at(c, h - 1 - i, w - 1 - j),
                    _ => img.at(c, h - 1 - j, i),
                };
                *out.at_mut(c, i, j) = v;
            }
        }
    }
    out
}

/// Two-channel Sobel response: channel 0 is the horizontal derivative
/// (`Gx = [[-1,0,1],[-2,0,2],[-1,0,1]] / 8`), channel 1 the vertical one
/// (`Gy = Gxᵀ`). Borders are replicate-padded; colour input is reduced to its
/// channel mean first.
pub fn sobel(img: &Image) -> Result<Image> {
    if img.height < 3 || img.width < 3 {
        return Err(Error::ImageTooSmall {
            height: img.height,
            width: img.width,
        });
    }
    let gray = match img.channels {
        1 => img.clone(),
        3 => img.luminance(),
        c => return Err(Error::UnsupportedChannels(c)),
    };
    let (h, w) = (gray.height, gray.width);
    let px = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        gray.at(0, y, x)
    };
    let mut out = Image::filled(2, h, w, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
            let gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
            *out.at_mut(0, y as usize, x as usize) = gx / 8.0;
            *out.at_mut(1, y as usize, x as usize) = gy / 8.0;
        }
    }
    Ok(out)
}

/// Network input for one image: rotate, optionally Sobel-filter, flatten.
pub fn prepare_input(img: &Image, rotation: RotationLabel, use_sobel: bool) -> Result<Vec<f64>> {
    let rotated = rotate(img, rotation);
    if use_sobel {
        Ok(sobel(&rotated)?.pixels)
    } else {
        Ok(rotated.pixels)
    }
}

/// Flattened input length produced by [`prepare_input`] for a square image.
pub fn input_dim(channels: usize, height: usize, width: usize, use_sobel: bool) -> usize {
    if use_sobel {
        2 * height * width
    } else {
        channels * height * width
    }
}
