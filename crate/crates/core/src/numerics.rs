//! Dense matrices, seeded randomness and the feature normalisation used
//! before every clustering pass (PCA whitening followed by row-wise ℓ2
//! normalisation).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting a wrong length or any
    /// non-finite entry.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally long rows. An empty slice yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |r| self.row(r))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Concatenates matrices with the same column count vertically.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    context: "vstack",
                    expected: cols,
                    found: p.cols,
                });
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, the natural product for `out × in` weight matrices.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matmul_transposed",
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                out.data[r * other.rows + c] = dot(a, other.row(c));
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-column mean.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Covariance with the `1/N` normaliser.
    pub fn covariance(&self) -> Matrix {
        let mean = self.column_means();
        let d = self.cols;
        let mut cov = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for row in self.row_iter() {
            for ((c, &v), &m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = v - m;
            }
            for i in 0..d {
                let ci = centered[i];
                for j in i..d {
                    cov.data[i * d + j] += ci * centered[j];
                }
            }
        }
        let n = self.rows.max(1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov.data[i * d + j] / n;
                cov.data[i * d + j] = v;
                cov.data[j * d + i] = v;
            }
        }
        cov
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// SplitMix64 finaliser; used to derive independent child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator with a platform independent draw sequence (ChaCha8).
///
/// Parallel code must not share one generator; derive a child with
/// [`Rng::fork`] instead.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new generator whose seed depends only on this generator's seed and
    /// `stream`, not on how many values were drawn so far.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(mix_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `amount` distinct indices from `[0, n)`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in non-increasing order and the matching unit
/// eigenvectors as the columns of a `d x d` matrix. Each eigenvector is
/// oriented so that its entry of largest magnitude is positive.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigen",
            expected: n,
            found: a.cols(),
        });
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.as_slice().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        let floor = f64::EPSILON * scale;
        if off <= floor * floor * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut best = 0;
        for r in 0..n {
            if v.get(r, src).abs() > v.get(best, src).abs() {
                best = r;
            }
        }
        let sign = if v.get(best, src) < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors.set(r, col, sign * v.get(r, src));
        }
    }
    Ok((values, vectors))
}

/// Affine PCA-whitening map `x -> (x - mean) · projection`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    /// `d x p`; column `j` is the `j`-th eigenvector scaled by
    /// `1 / sqrt(eigenvalue_j + epsilon)`.
    projection: Matrix,
    eigenvalues: Vec<f64>,
    epsilon: f64,
}

pub const DEFAULT_WHITENING_EPSILON: f64 = 1e-5;

impl WhiteningTransform {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// Eigenvalues of the kept components, non-increasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }
}

/// Fits a PCA-whitening transform. `target_dim = None` keeps every
/// component; `Some(p)` keeps the `p` leading ones.
pub fn fit_whitening(
    features: &Matrix,
    target_dim: Option<usize>,
    epsilon: f64,
) -> Result<WhiteningTransform> {
    let d = features.cols();
    if features.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs at least 2 rows, got {}",
            features.rows()
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "whitening epsilon must be positive, got {epsilon}"
        )));
    }
    let p = target_dim.unwrap_or(d);
    if p == 0 || p > d {
        return Err(Error::InvalidArgument(format!(
            "target dimension {p} must lie in 1..={d}"
        )));
    }
    let mean = features.column_means();
    let cov = features.covariance();
    let (values, vectors) = symmetric_eigen(&cov)?;
    let magnitude = mean.iter().fold(1.0f64, |acc, m| acc.max(m * m));
    if values.first().map_or(true, |&l| l <= 1e-12 * magnitude) {
        return Err(Error::DegenerateCovariance { dims: d });
    }
    let mut projection = Matrix::zeros(d, p);
    let mut kept = Vec::with_capacity(p);
    for j in 0..p {
        // tiny negative eigenvalues come from round-off
        let lambda = values[j].max(0.0);
        kept.push(lambda);
        let s = 1.0 / libm::sqrt(lambda + epsilon);
        for r in 0..d {
            projection.set(r, j, vectors.get(r, j) * s);
        }
    }
    Ok(WhiteningTransform {
        mean,
        projection,
        eigenvalues: kept,
        epsilon,
    })
}

pub fn apply_whitening(t: &WhiteningTransform, features: &Matrix) -> Result<Matrix> {
    if features.cols() != t.mean.len() {
        return Err(Error::DimensionMismatch {
            context: "apply_whitening",
            expected: t.mean.len(),
            found: features.cols(),
        });
    }
    let p = t.projection.cols();
    let mut out = Matrix::zeros(features.rows(), p);
    let mut centered = vec![0.0; t.mean.len()];
    for (r, row) in features.row_iter().enumerate() {
        for ((c, &x), &m) in centered.iter_mut().zip(row).zip(&t.mean) {
            *c = x - m;
        }
        let out_row = out.row_mut(r);
        for (i, &c) in centered.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &w) in out_row.iter_mut().zip(t.projection.row(i)) {
                *o += c * w;
            }
        }
    }
    Ok(out)
}

/// Scales every non-zero row to unit Euclidean norm. Zero rows stay zero.
pub fn l2_normalize_rows(features: &Matrix) -> Matrix {
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = libm::sqrt(dot(row, row));
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_sample(n: usize, stds: &[f64], seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let mut data = Vec::with_capacity(n * stds.len());
        for _ in 0..n {
            for &s in stds {
                data.push(3.0 + s * rng.normal());
            }
        }
        Matrix::from_vec(n, stds.len(), data).unwrap()
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::Shape { .. })
        ));
        assert_eq!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.fork(3).next_u64(), Rng::new(42).fork(3).next_u64());
        assert_ne!(Rng::new(42).fork(3).next_u64(), Rng::new(42).fork(4).next_u64());
    }

    #[test]
    fn eigen_reconstructs() {
        let x = gaussian_sample(50, &[1.0, 2.0, 0.5, 3.0], 1);
        let cov = x.covariance();
        let (vals, vecs) = symmetric_eigen(&cov).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        // V diag(λ) Vᵀ = cov
        for i in 0..4 {
            for j in 0..4 {
                let r: f64 = (0..4).map(|k| vecs.get(i, k) * vals[k] * vecs.get(j, k)).sum();
                assert!((r - cov.get(i, j)).abs() < 1e-10);
            }
        }
        for col in 0..4 {
            let (mut best, mut best_abs) = (0.0, -1.0);
            for r in 0..4 {
                if vecs.get(r, col).abs() > best_abs {
                    best_abs = vecs.get(r, col).abs();
                    best = vecs.get(r, col);
                }
            }
            assert!(best > 0.0);
        }
    }

    #[test]
    fn identity_covariance_gives_scaled_orthonormal_projection() {
        // ±1 on each axis: zero mean, identity covariance
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
            .unwrap();
        let mut x2 = x.clone();
        x2.scale(libm::sqrt(2.0));
        let eps = 1e-5;
        let t = fit_whitening(&x2, None, eps).unwrap();
        let p = t.projection();
        let expect = 1.0 / libm::sqrt(1.0 + eps);
        let ptp = p.transpose().matmul(p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { expect * expect } else { 0.0 };
                assert!((ptp.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn whitening_diag_4_1_sample() {
        let x = gaussian_sample(10_000, &[2.0, 1.0], 7);
        let t = fit_whitening(&x, None, DEFAULT_WHITENING_EPSILON).unwrap();
        // independent check on a fresh sample from the same law
        let fresh = gaussian_sample(10_000, &[2.0, 1.0], 8);
        let cov = apply_whitening(&t, &fresh).unwrap().covariance();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov.get(i, j) - want).abs() < 0.05, "{i},{j}: {}", cov.get(i, j));
            }
        }
    }

    #[test]
    fn whitening_fitting_sample_is_identity() {
        let x = gaussian_sample(500, &[5.0, 1.0, 0.3, 2.0], 11);
        let eps = 1e-5;
        let t = fit_whitening(&x, None, eps).unwrap();
        let cov = apply_whitening(&t, &x).unwrap().covariance();
        let max_diag = (0..4).map(|i| cov.get(i, i)).fold(0.0, f64::max);
        for i in 0..4 {
            // λ / (λ + ε)
            let want = t.eigenvalues()[i] / (t.eigenvalues()[i] + eps);
            assert!((cov.get(i, i) - want).abs() < 1e-9);
            assert!((cov.get(i, i) - 1.0).abs() < 1e-6 * (1.0 / eps));
            for j in 0..4 {
                if i != j {
                    assert!(cov.get(i, j).abs() <= 1e-6 * max_diag);
                }
            }
        }
    }

    #[test]
    fn whitening_reduces_dimension() {
        let x = gaussian_sample(200, &[4.0, 3.0, 2.0, 1.0, 0.5], 2);
        let t = fit_whitening(&x, Some(2), 1e-5).unwrap();
        assert_eq!(t.output_dim(), 2);
        let y = apply_whitening(&t, &x).unwrap();
        assert_eq!((y.rows(), y.cols()), (200, 2));
        assert!(t.eigenvalues()[0] >= t.eigenvalues()[1]);
    }

    #[test]
    fn mean_maps_to_zero() {
        let x = gaussian_sample(100, &[1.0, 2.0, 3.0], 3);
        let t = fit_whitening(&x, None, 1e-5).unwrap();
        let copies = Matrix::from_rows(&vec![t.mean().to_vec(); 7]).unwrap();
        let y = apply_whitening(&t, &copies).unwrap();
        assert!(y.as_slice().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn whitening_errors() {
        let constant = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(
            fit_whitening(&constant, None, 1e-5),
            Err(Error::DegenerateCovariance { dims: 2 })
        );
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(fit_whitening(&one, None, 1e-5).is_err());
        let x = gaussian_sample(10, &[1.0, 1.0], 0);
        assert!(fit_whitening(&x, Some(3), 1e-5).is_err());
        assert!(fit_whitening(&x, None, 0.0).is_err());
        let t = fit_whitening(&x, None, 1e-5).unwrap();
        let wrong = Matrix::zeros(2, 3);
        assert!(matches!(
            apply_whitening(&t, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn l2_rows() {
        let x = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0], [0.6, 0.8]]).unwrap();
        let y = l2_normalize_rows(&x);
        assert_eq!(y.row(0), &[0.6, 0.8]);
        assert_eq!(y.row(1), &[0.0, 0.0]);
        assert_eq!(y.row(2), &[0.6, 0.8]);

        let r = gaussian_sample(100, &[1.0; 6], 4);
        let y = l2_normalize_rows(&r);
        for row in y.row_iter() {
            assert!((libm::sqrt(dot(row, row)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let a = gaussian_sample(3, &[1.0; 4], 5);
        let b = gaussian_sample(5, &[1.0; 4], 6);
        let p1 = a.matmul_transposed(&b).unwrap();
        let p2 = a.matmul(&b.transpose()).unwrap();
        for (x, y) in p1.as_slice().iter().zip(p2.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
