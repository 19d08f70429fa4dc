//! Dense tensors and the convolution kernels shared by every numerical stage.
//!
//! Values are stored as `f32` and reductions accumulate in `f64`. Gaussian
//! pooling is computed as a row pass followed by a column pass, evaluated only
//! at the retained subsample positions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid_param, Result};

/// A `height × width × channels` map stored channel-outer, row-major within a
/// channel: `data[c·H·W + y·W + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(invalid_param!(
                "tensor data length {} does not match {height}x{width}x{channels}",
                data.len()
            ));
        }
        Ok(Self { height, width, channels, data })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid_param!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
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

    /// `self · v` with `f64` accumulation.
    pub fn mul_vec(&self, v: &[f32]) -> Result<Vec<f32>> {
        if v.len() != self.cols {
            return Err(invalid_param!(
                "matrix-vector mismatch: {} columns vs vector of {}",
                self.cols,
                v.len()
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v) as f32).collect())
    }
}

/// Inner product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators; fixed order keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] as f64 * b[k] as f64;
        acc[1] += a[k + 1] as f64 * b[k + 1] as f64;
        acc[2] += a[k + 2] as f64 * b[k + 2] as f64;
        acc[3] += a[k + 3] as f64 * b[k + 3] as f64;
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] as f64 * b[k] as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Normalized 1-D Gaussian of length `2·gamma + 1` with bandwidth `gamma/√2`.
pub fn gaussian_kernel_1d(gamma: usize) -> Result<Vec<f64>> {
    if gamma == 0 {
        return Err(invalid_param!("gaussian kernel factor must be >= 1"));
    }
    let g = gamma as i64;
    // 2σ² with σ = γ/√2 is γ².
    let denom = (gamma * gamma) as f64;
    let mut k: Vec<f64> = (-g..=g).map(|i| libm::exp(-((i * i) as f64) / denom)).collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

/// Square 2-D kernel kept in `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Kernel2d {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.side + c]
    }
}

/// Normalized `(2·gamma+1)²` Gaussian pooling kernel.
pub fn gaussian_kernel_2d(gamma: usize) -> Result<Kernel2d> {
    if gamma == 0 {
        return Err(invalid_param!("gaussian kernel factor must be >= 1"));
    }
    let g = gamma as i64;
    let denom = (gamma * gamma) as f64;
    let mut data = Vec::with_capacity((2 * gamma + 1) * (2 * gamma + 1));
    for k1 in -g..=g {
        for k2 in -g..=g {
            data.push(libm::exp(-((k1 * k1 + k2 * k2) as f64) / denom));
        }
    }
    let sum: f64 = data.iter().sum();
    for v in &mut data {
        *v /= sum;
    }
    Ok(Kernel2d { side: 2 * gamma + 1, data })
}

fn check_kernel(kernel: &[f64]) -> Result<usize> {
    if kernel.len() % 2 == 0 {
        return Err(invalid_param!("convolution kernel length {} must be odd", kernel.len()));
    }
    Ok(kernel.len() / 2)
}

/// Horizontal pass at the requested output columns, for every row of every
/// channel. Output is `channels × height × cols.len()`.
fn row_pass(input: &Tensor3, kernel: &[f64], radius: usize, cols: &[usize]) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let out_w = cols.len();
    let mut out = vec![0.0f64; input.channels * h * out_w];
    for c in 0..input.channels {
        let plane = input.channel(c);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let dst = &mut out[(c * h + y) * out_w..(c * h + y + 1) * out_w];
            for (o, &x) in cols.iter().enumerate() {
                let mut acc = 0.0f64;
                for (t, &kv) in kernel.iter().enumerate() {
                    let sx = x as isize + t as isize - radius as isize;
                    if sx >= 0 && (sx as usize) < w {
                        acc += kv * row[sx as usize] as f64;
                    }
                }
                dst[o] = acc;
            }
        }
    }
    out
}

/// Vertical pass over a row-pass buffer at the requested output rows.
fn column_pass(
    buf: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    radius: usize,
    rows: &[usize],
) -> Vec<f32> {
    let out_h = rows.len();
    let mut out = vec![0.0f32; channels * out_h * w];
    for c in 0..channels {
        let plane = &buf[c * h * w..(c + 1) * h * w];
        for (o, &y) in rows.iter().enumerate() {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (t, &kv) in kernel.iter().enumerate() {
                    let sy = y as isize + t as isize - radius as isize;
                    if sy >= 0 && (sy as usize) < h {
                        acc += kv * plane[sy as usize * w + x];
                    }
                }
                out[(c * out_h + o) * w + x] = acc as f32;
            }
        }
    }
    out
}

/// Convolves every channel with `kernel` along rows and then along columns,
/// zero-padded at the borders.
pub fn conv_separable(input: &Tensor3, kernel: &[f64]) -> Result<Tensor3> {
    let radius = check_kernel(kernel)?;
    let cols: Vec<usize> = (0..input.width).collect();
    let rows: Vec<usize> = (0..input.height).collect();
    let buf = row_pass(input, kernel, radius, &cols);
    let data = column_pass(&buf, input.channels, input.height, input.width, kernel, radius, &rows);
    Tensor3::from_vec(input.height, input.width, input.channels, data)
}

fn sample_positions(dim: usize, stride: usize, offset: usize) -> Vec<usize> {
    (offset..dim).step_by(stride).collect()
}

fn check_stride(stride: usize, offset: usize) -> Result<()> {
    if stride == 0 {
        return Err(invalid_param!("subsample stride must be >= 1"));
    }
    if offset >= stride {
        return Err(invalid_param!("subsample offset {offset} must be below stride {stride}"));
    }
    Ok(())
}

/// Keeps positions `offset + i·stride` along both spatial axes.
pub fn subsample(input: &Tensor3, stride: usize, offset: usize) -> Result<Tensor3> {
    check_stride(stride, offset)?;
    let rows = sample_positions(input.height, stride, offset);
    let cols = sample_positions(input.width, stride, offset);
    let mut out = Tensor3::zeros(rows.len(), cols.len(), input.channels);
    for c in 0..input.channels {
        for (oy, &y) in rows.iter().enumerate() {
            for (ox, &x) in cols.iter().enumerate() {
                out.set(oy, ox, c, input.get(y, x, c));
            }
        }
    }
    Ok(out)
}

/// Linear pooling with Gaussian weights: separable convolution with
/// [`gaussian_kernel_1d`]`(gamma)` sampled with stride `gamma`.
///
/// Only the retained columns are row-filtered and only the retained rows are
/// column-filtered, so the result is bit-identical to
/// `subsample(conv_separable(input, k), gamma, offset)` at a fraction of the
/// cost.
pub fn pool_gaussian(input: &Tensor3, gamma: usize, offset: usize) -> Result<Tensor3> {
    let kernel = gaussian_kernel_1d(gamma)?;
    check_stride(gamma, offset)?;
    let radius = gamma;
    let rows = sample_positions(input.height, gamma, offset);
    let cols = sample_positions(input.width, gamma, offset);
    let buf = row_pass(input, &kernel, radius, &cols);
    let data = column_pass(&buf, input.channels, input.height, cols.len(), &kernel, radius, &rows);
    Tensor3::from_vec(rows.len(), cols.len(), input.channels, data)
}

/// `W·M + B·1ᵀ`: column `j` of the result is `W·M[:, j] + B`.
pub fn affine_map(w: &Matrix, b: &[f32], m: &Matrix) -> Result<Matrix> {
    if w.cols != m.rows {
        return Err(invalid_param!(
            "affine map inner dimension mismatch: W is {}x{}, M is {}x{}",
            w.rows,
            w.cols,
            m.rows,
            m.cols
        ));
    }
    if b.len() != w.rows {
        return Err(invalid_param!("bias length {} does not match {} rows", b.len(), w.rows));
    }
    let mt = m.transpose();
    let mut out = Matrix::zeros(w.rows, m.cols);
    for r in 0..w.rows {
        let wr = w.row(r);
        let dst = &mut out.data[r * m.cols..(r + 1) * m.cols];
        for (j, d) in dst.iter_mut().enumerate() {
            *d = (dot(wr, mt.row(j)) + b[r] as f64) as f32;
        }
    }
    Ok(out)
}

/// Divides every column by `max(‖column‖, epsilon)`; returns the
/// pre-division norms.
pub fn l2_normalize_columns(m: &Matrix, epsilon: f32) -> (Matrix, Vec<f32>) {
    let mut sq = vec![0.0f64; m.cols];
    for r in 0..m.rows {
        for (c, s) in sq.iter_mut().enumerate() {
            let v = m.data[r * m.cols + c] as f64;
            *s += v * v;
        }
    }
    let norms: Vec<f32> = sq.iter().map(|&s| libm::sqrt(s) as f32).collect();
    let mut out = m.clone();
    for r in 0..m.rows {
        for c in 0..m.cols {
            let d = norms[c].max(epsilon) as f64;
            out.data[r * m.cols + c] = (m.data[r * m.cols + c] as f64 / d) as f32;
        }
    }
    (out, norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f32 {
        (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0
    }

    fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| uniform(&mut rng)).collect();
        Tensor3::from_vec(h, w, c, data).unwrap()
    }

    /// Direct evaluation of the normalized 2-D Gaussian formula.
    fn kernel_2d_oracle(gamma: usize) -> Vec<Vec<f64>> {
        let g = gamma as i64;
        let sigma = gamma as f64 / libm::sqrt(2.0);
        let mut k = vec![vec![0.0; 2 * gamma + 1]; 2 * gamma + 1];
        let mut sum = 0.0;
        for k1 in -g..=g {
            for k2 in -g..=g {
                let v = libm::exp(-((k1 * k1 + k2 * k2) as f64) / (2.0 * sigma * sigma));
                k[(k1 + g) as usize][(k2 + g) as usize] = v;
                sum += v;
            }
        }
        for row in &mut k {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        k
    }

    /// Direct zero-padded 2-D convolution with the outer-product kernel.
    pub(crate) fn conv2d_oracle(input: &Tensor3, k: &[Vec<f64>]) -> Tensor3 {
        let r = (k.len() / 2) as isize;
        let mut out = Tensor3::zeros(input.height, input.width, input.channels);
        for c in 0..input.channels {
            for y in 0..input.height as isize {
                for x in 0..input.width as isize {
                    let mut acc = 0.0f64;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (sy, sx) = (y + dy, x + dx);
                            if sy < 0 || sx < 0 || sy >= input.height as isize || sx >= input.width as isize {
                                continue;
                            }
                            acc += k[(dy + r) as usize][(dx + r) as usize]
                                * input.get(sy as usize, sx as usize, c) as f64;
                        }
                    }
                    out.set(y as usize, x as usize, c, acc as f32);
                }
            }
        }
        out
    }

    #[test]
    fn kernel_1d_gamma3_sums_to_one() {
        let k = gaussian_kernel_1d(3).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_1d_gamma1_symmetric_peaked() {
        let k = gaussian_kernel_1d(1).unwrap();
        assert_eq!(k.len(), 3);
        assert_eq!(k[0], k[2]);
        assert!(k[1] > k[0]);
    }

    #[test]
    fn kernel_zero_gamma_rejected() {
        assert!(matches!(gaussian_kernel_1d(0), Err(crate::Error::InvalidParameter(_))));
        assert!(gaussian_kernel_2d(0).is_err());
    }

    #[test]
    fn outer_product_matches_formula() {
        for gamma in [2usize, 3] {
            let k1 = gaussian_kernel_1d(gamma).unwrap();
            let k2 = gaussian_kernel_2d(gamma).unwrap();
            let oracle = kernel_2d_oracle(gamma);
            for (r, row) in oracle.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert!((k1[r] * k1[c] - v).abs() < 1e-12);
                    assert!((k1[r] * k1[c] - k2.get(r, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_2d_properties() {
        for gamma in 1..6 {
            let k = gaussian_kernel_2d(gamma).unwrap();
            let s: f64 = k.data.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let center = k.get(gamma, gamma);
            assert!(k.data.iter().all(|&v| v <= center));
            let n = 2 * gamma + 1;
            for r in 0..n {
                for c in 0..n {
                    assert_eq!(k.get(r, c), k.get(n - 1 - r, n - 1 - c));
                }
            }
        }
    }

    #[test]
    fn kernel_2d_gamma2_matches_scalar_loop() {
        let k = gaussian_kernel_2d(2).unwrap();
        let oracle = kernel_2d_oracle(2);
        for r in 0..5 {
            for c in 0..5 {
                assert!((k.get(r, c) - oracle[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_equals_direct_convolution() {
        let k1 = gaussian_kernel_1d(3).unwrap();
        let k2 = kernel_2d_oracle(3);
        for seed in 0..5 {
            let t = random_tensor(17, 17, 16, seed);
            let a = conv_separable(&t, &k1).unwrap();
            let b = conv2d_oracle(&t, &k2);
            let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(err <= 1e-5, "max abs error {err}");
        }
    }

    #[test]
    fn separable_constant_interior_preserved() {
        let t = Tensor3::from_vec(31, 31, 2, vec![1.0; 31 * 31 * 2]).unwrap();
        let out = conv_separable(&t, &gaussian_kernel_1d(3).unwrap()).unwrap();
        assert!((out.get(15, 15, 1) - 1.0).abs() < 1e-6);
        assert!(out.get(0, 0, 0) < out.get(15, 15, 0));
    }

    #[test]
    fn separable_impulse_response() {
        let mut t = Tensor3::zeros(15, 15, 1);
        t.set(7, 7, 0, 1.0);
        let out = conv_separable(&t, &gaussian_kernel_1d(3).unwrap()).unwrap();
        let k = gaussian_kernel_2d(3).unwrap();
        for dy in 0..7 {
            for dx in 0..7 {
                assert!((out.get(4 + dy, 4 + dx, 0) as f64 - k.get(dy, dx)).abs() < 1e-7);
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let t = Tensor3::zeros(4, 4, 1);
        assert!(conv_separable(&t, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn subsample_shapes() {
        let t = Tensor3::zeros(51, 51, 16);
        assert_eq!(subsample(&t, 3, 1).unwrap().shape(), (17, 17, 16));
        let t = Tensor3::zeros(14, 14, 8);
        assert_eq!(subsample(&t, 2, 0).unwrap().shape(), (7, 7, 8));
        let r = random_tensor(5, 6, 2, 9);
        assert_eq!(subsample(&r, 1, 0).unwrap(), r);
        assert!(subsample(&r, 0, 0).is_err());
        assert!(subsample(&r, 2, 2).is_err());
    }

    #[test]
    fn pool_is_bitwise_composition() {
        for (h, w, gamma, offset) in [(51, 51, 3, 1), (14, 14, 2, 0), (20, 9, 3, 2), (7, 12, 1, 0)] {
            let t = random_tensor(h, w, 3, (h * w) as u64);
            let pooled = pool_gaussian(&t, gamma, offset).unwrap();
            let composed =
                subsample(&conv_separable(&t, &gaussian_kernel_1d(gamma).unwrap()).unwrap(), gamma, offset)
                    .unwrap();
            assert_eq!(pooled, composed);
            assert_eq!(pooled.height, (h - offset).div_ceil(gamma));
            assert_eq!(pooled.width, (w - offset).div_ceil(gamma));
        }
    }

    #[test]
    fn pool_constant_input() {
        let t = Tensor3::from_vec(51, 51, 16, vec![2.0; 51 * 51 * 16]).unwrap();
        let p = pool_gaussian(&t, 3, 1).unwrap();
        assert_eq!(p.shape(), (17, 17, 16));
        let interior = p.get(8, 8, 0);
        assert!((interior - 2.0).abs() < 1e-5);
        assert!(p.data.iter().all(|&v| v <= interior + 1e-6));
    }

    #[test]
    fn affine_identity_and_shape() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = affine_map(&Matrix::identity(3), &[0.0; 3], &m).unwrap();
        assert_eq!(out, m);
        let w = Matrix::zeros(1024, 256);
        let m = Matrix::zeros(256, 196);
        let out = affine_map(&w, &vec![0.0; 1024], &m).unwrap();
        assert_eq!((out.rows, out.cols), (1024, 196));
        assert!(affine_map(&w, &[0.0; 3], &m).is_err());
        assert!(affine_map(&Matrix::zeros(2, 3), &[0.0; 2], &Matrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, p) = (7, 11, 5);
        let w = Matrix::from_vec(n, d, (0..n * d).map(|_| uniform(&mut rng)).collect()).unwrap();
        let m = Matrix::from_vec(d, p, (0..d * p).map(|_| uniform(&mut rng)).collect()).unwrap();
        let b: Vec<f32> = (0..n).map(|_| uniform(&mut rng)).collect();
        let out = affine_map(&w, &b, &m).unwrap();
        for i in 0..n {
            for j in 0..p {
                let mut acc = b[i] as f64;
                for k in 0..d {
                    acc += w.get(i, k) as f64 * m.get(k, j) as f64;
                }
                assert!((out.get(i, j) as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_columns_cases() {
        let m = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        let (n, norms) = l2_normalize_columns(&m, 1e-8);
        assert_eq!(norms, vec![5.0, 0.0]);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-7 && (n.get(1, 0) - 0.8).abs() < 1e-7);
        assert_eq!(n.get(0, 1), 0.0);
        assert_eq!(n.get(1, 1), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn pool_shape(h in 1usize..30, w in 1usize..30, c in 1usize..4, gamma in 1usize..5, off in 0usize..5) {
                let offset = off % gamma;
                let t = Tensor3::zeros(h, w, c);
                let p = pool_gaussian(&t, gamma, offset).unwrap();
                prop_assert_eq!(p.shape(), ((h.saturating_sub(offset)).div_ceil(gamma), (w.saturating_sub(offset)).div_ceil(gamma), c));
            }

            #[test]
            fn affine_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (n, d, p) = (4, 6, 3);
                let mut draw = |len: usize| -> Vec<f32> { (0..len).map(|_| uniform(&mut rng)).collect() };
                let w = Matrix::from_vec(n, d, draw(n * d)).unwrap();
                let bias = draw(n);
                let m1 = Matrix::from_vec(d, p, draw(d * p)).unwrap();
                let m2 = Matrix::from_vec(d, p, draw(d * p)).unwrap();
                let mix = Matrix::from_vec(d, p, m1.data.iter().zip(&m2.data)
                    .map(|(&x, &y)| (a * x as f64 + b * y as f64) as f32).collect()).unwrap();
                let f = affine_map(&w, &bias, &mix).unwrap();
                let f1 = affine_map(&w, &bias, &m1).unwrap();
                let f2 = affine_map(&w, &bias, &m2).unwrap();
                for i in 0..n {
                    for j in 0..p {
                        let rhs = a * f1.get(i, j) as f64 + b * f2.get(i, j) as f64 - (a + b - 1.0) * bias[i] as f64;
                        // f32 storage bounds the attainable agreement.
                        prop_assert!((f.get(i, j) as f64 - rhs).abs() < 1e-5);
                    }
                }
            }

            #[test]
            fn nonzero_columns_become_unit(seed in any::<u64>()) {
                let t = random_tensor(6, 5, 1, seed);
                let m = Matrix::from_vec(6, 5, t.data).unwrap();
                let (n, _) = l2_normalize_columns(&m, 1e-8);
                for c in 0..5 {
                    let s: f64 = n.column(c).iter().map(|&v| (v as f64) * (v as f64)).sum();
                    prop_assert!((s.sqrt() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
