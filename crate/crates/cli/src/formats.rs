//! Little-endian binary containers.
//!
//! * `FMAT1`: dense f32 matrices (features, centroids, parameter blocks).
//! * `IVEC1`: i64 vectors (cluster assignments, ground-truth labels).
//! * `IMG1`: image datasets with per-image shapes.
//! * `CKPT1`: named FMAT1 blocks.
//!
//! Values are widened to f64 on read, so anything representable in f32
//! round-trips exactly.

use std::fs;
use std::path::Path;

use deepercluster_core::numerics::Matrix;
use deepercluster_core::preprocess::Image;

use crate::error::{CliError, Result};

pub const FMAT_MAGIC: &[u8] = b"FMAT1\0";
pub const IVEC_MAGIC: &[u8] = b"IVEC1\0";
pub const IMG_MAGIC: &[u8] = b"IMG1\0";
pub const CKPT_MAGIC: &[u8] = b"CKPT1\0";
pub const CKPT_VERSION: u32 = 1;

/// Format tags recorded in run manifests.
pub const FORMAT_VERSIONS: &str = "FMAT1,IVEC1,IMG1,CKPT1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if n > self.remaining() {
            return Err(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8]) -> Result<(), String> {
        let got = self.take(magic.len()).map_err(|_| "bad magic".to_string())?;
        if got != magic {
            return Err(format!("bad magic, expected {}", String::from_utf8_lossy(&magic[..magic.len() - 1])));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count of `width`-byte items that must fit in the rest of the buffer.
    fn count(&mut self, n: u64, width: usize) -> Result<usize, String> {
        let n = usize::try_from(n).map_err(|_| format!("count {n} too large"))?;
        match n.checked_mul(width) {
            Some(bytes) if bytes <= self.remaining() => Ok(n),
            _ => Err(format!("declared {n} entries but only {} bytes remain", self.remaining())),
        }
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<(), String> {
        if self.remaining() != 0 {
            return Err(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingArtifact(path.to_path_buf())
        } else {
            CliError::io(path, e)
        }
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn encode_fmat(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + 4 * m.as_slice().len());
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    push_f32s(&mut out, m.as_slice());
    out
}

fn fmat_from(r: &mut Reader<'_>) -> Result<Matrix, String> {
    r.magic(FMAT_MAGIC)?;
    let rows = r.u64()?;
    let cols = r.u64()?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| format!("{rows}x{cols} overflows"))?;
    let len = r.count(len, 4)?;
    let data = r.f32s(len)?;
    Matrix::from_vec(rows as usize, cols as usize, data).map_err(|e| e.to_string())
}

pub fn decode_fmat(bytes: &[u8]) -> Result<Matrix, String> {
    let mut r = Reader::new(bytes);
    let m = fmat_from(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn encode_ivec(values: &[i64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 8 * values.len());
    out.extend_from_slice(IVEC_MAGIC);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_ivec(bytes: &[u8]) -> Result<Vec<i64>, String> {
    let mut r = Reader::new(bytes);
    r.magic(IVEC_MAGIC)?;
    let n = r.u64()?;
    let n = r.count(n, 8)?;
    let out = r
        .take(n * 8)?
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    Ok(out)
}

pub fn encode_images(images: &[Image]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(IMG_MAGIC);
    out.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for (i, img) in images.iter().enumerate() {
        for dim in [img.channels(), img.height(), img.width()] {
            let dim = u16::try_from(dim).map_err(|_| format!("image {i}: dimension {dim} exceeds u16"))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        push_f32s(&mut out, img.pixels());
    }
    Ok(out)
}

pub fn decode_images(bytes: &[u8]) -> Result<Vec<Image>, String> {
    let mut r = Reader::new(bytes);
    r.magic(IMG_MAGIC)?;
    let n = r.u64()?;
    // every image carries at least its 6-byte header
    let n = r.count(n, 6)?;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let (c, h, w) = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        let len = r.count((c * h * w) as u64, 4)?;
        let pixels = r.f32s(len)?;
        images.push(Image::new(c, h, w, pixels).map_err(|e| format!("image {i}: {e}"))?);
    }
    r.finish()?;
    Ok(images)
}

/// Named parameter blocks in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blocks: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.blocks.len() as u64).to_le_bytes());
    for (name, m) in &ckpt.blocks {
        let len = u16::try_from(name.len()).map_err(|_| format!("block name `{name}` too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_fmat(m));
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader::new(bytes);
    r.magic(CKPT_MAGIC)?;
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u64()?;
    let n = r.count(n, 2 + FMAT_MAGIC.len() + 16)?;
    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "block name is not UTF-8".to_string())?
            .to_string();
        let m = fmat_from(&mut r).map_err(|e| format!("block `{name}`: {e}"))?;
        blocks.push((name, m));
    }
    r.finish()?;
    Ok(Checkpoint { blocks })
}

pub fn read_fmat(path: &Path) -> Result<Matrix> {
    decode_fmat(&read_file(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_fmat(path: &Path, m: &Matrix) -> Result<()> {
    write_file(path, &encode_fmat(m))
}

pub fn read_ivec(path: &Path) -> Result<Vec<i64>> {
    decode_ivec(&read_file(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_ivec(path: &Path, values: &[i64]) -> Result<()> {
    write_file(path, &encode_ivec(values))
}

/// Non-negative labels stored as IVEC1.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_ivec(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| usize::try_from(v).map_err(|_| CliError::format(path, format!("entry {i} is negative ({v})"))))
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let values: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    write_ivec(path, &values)
}

pub fn read_images(path: &Path) -> Result<Vec<Image>> {
    decode_images(&read_file(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_images(path: &Path, images: &[Image]) -> Result<()> {
    let bytes = encode_images(images).map_err(|e| CliError::format(path, e))?;
    write_file(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt).map_err(|e| CliError::format(path, e))?;
    write_file(path, &bytes)
}
