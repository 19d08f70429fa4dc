//! CKN-grad: a two-layer convolutional kernel network over gradient patches.
//!
//! Layer 1 embeds each pixel's gradient orientation on `n1` fixed directions
//! and pools the result with Gaussian weights. Layer 2 maps every `4×4`
//! sub-patch of the pooled map through a learned exponential embedding,
//! scaled by the sub-patch norm, and pools again. The flattened map is
//! projected with PCA and L2-normalized.
//!
//! At the default hyperparameters the shapes are
//! `51×51×2 → 51×51×16 → 17×17×16 → 256×196 → 1024×196 → 7×7×1024 → 50176 → 1024`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid_param, Result};
use crate::imaging::GradientField;
use crate::tensor::{affine_map, dot, l2_normalize_columns, pool_gaussian, Matrix, Tensor3};

/// Columns with a norm below this are treated as zero sub-patches.
pub const NORM_EPSILON: f32 = 1e-6;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CknShape {
    /// Number of layer-1 orientations.
    pub n1: usize,
    /// Layer-1 pooling factor (kernel `2·γ+1`, stride `γ`).
    pub gamma1: usize,
    pub patch_side: usize,
    /// Side of the layer-2 sub-patches.
    pub sub2_side: usize,
    pub gamma2: usize,
    /// Number of layer-2 filters.
    pub n2: usize,
}

impl Default for CknShape {
    fn default() -> Self {
        Self { n1: 16, gamma1: 3, patch_side: 51, sub2_side: 4, gamma2: 2, n2: 1024 }
    }
}

impl CknShape {
    /// Desk-scale profile with a small second layer.
    pub fn desk() -> Self {
        Self { n2: 64, ..Self::default() }
    }

    /// Subsample offset of layer 1; places samples at cell centers.
    pub fn layer1_offset(&self) -> usize {
        self.gamma1 / 2
    }

    pub fn layer1_side(&self) -> usize {
        (self.patch_side - self.layer1_offset()).div_ceil(self.gamma1)
    }

    /// Sub-patch positions per axis on the layer-1 map.
    pub fn layer2_side(&self) -> usize {
        self.layer1_side() + 1 - self.sub2_side
    }

    pub fn pooled2_side(&self) -> usize {
        self.layer2_side().div_ceil(self.gamma2)
    }

    /// Length of a layer-2 input column.
    pub fn subpatch_dim(&self) -> usize {
        self.n1 * self.sub2_side * self.sub2_side
    }

    /// Length of the flattened descriptor before PCA.
    pub fn raw_dim(&self) -> usize {
        self.n2 * self.pooled2_side() * self.pooled2_side()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 {
            return Err(invalid_param!("n1 must be >= 2, got {}", self.n1));
        }
        if self.gamma1 == 0 || self.gamma2 == 0 {
            return Err(invalid_param!("pooling factors must be >= 1"));
        }
        if self.n2 == 0 {
            return Err(invalid_param!("n2 must be >= 1"));
        }
        if self.patch_side <= self.layer1_offset() || self.sub2_side == 0 {
            return Err(invalid_param!("patch side {} too small", self.patch_side));
        }
        if self.sub2_side > self.layer1_side() {
            return Err(invalid_param!(
                "layer-2 sub-patch side {} exceeds the {}-wide layer-1 map",
                self.sub2_side,
                self.layer1_side()
            ));
        }
        Ok(())
    }
}

/// All fixed and learned parameters of the descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct CknModel {
    pub shape: CknShape,
    /// Layer-2 kernel bandwidth.
    pub alpha2: f32,
    /// Transformed layer-2 filters, `n2 × subpatch_dim`.
    pub w2: Matrix,
    /// Shared layer-2 bias.
    pub b2: f32,
    pub pca_mean: Vec<f32>,
    /// `out_dim × raw_dim`, rows are principal directions.
    pub pca_proj: Matrix,
}

impl CknModel {
    pub fn out_dim(&self) -> usize {
        self.pca_proj.rows
    }

    /// Checks every shape and finiteness invariant.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let s = &self.shape;
        if !(self.alpha2 > 0.0) || !self.alpha2.is_finite() {
            return Err(invalid_param!("alpha2 must be positive and finite, got {}", self.alpha2));
        }
        if !self.b2.is_finite() {
            return Err(invalid_param!("b2 must be finite"));
        }
        if self.w2.rows != s.n2 || self.w2.cols != s.subpatch_dim() {
            return Err(invalid_param!(
                "W2 is {}x{}, expected {}x{}",
                self.w2.rows,
                self.w2.cols,
                s.n2,
                s.subpatch_dim()
            ));
        }
        if self.pca_mean.len() != s.raw_dim() {
            return Err(invalid_param!("pca_mean has {} entries, expected {}", self.pca_mean.len(), s.raw_dim()));
        }
        if self.pca_proj.cols != s.raw_dim() || self.pca_proj.rows == 0 {
            return Err(invalid_param!(
                "pca_proj is {}x{}, expected out_dim x {}",
                self.pca_proj.rows,
                self.pca_proj.cols,
                s.raw_dim()
            ));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !finite(&self.w2.data) || !finite(&self.pca_mean) || !finite(&self.pca_proj.data) {
            return Err(invalid_param!("model arrays contain non-finite values"));
        }
        Ok(())
    }
}

/// A unit-norm patch descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f32>,
    /// Index of the keypoint the patch was cropped around, when known.
    pub source_keypoint: Option<usize>,
}

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Layer-1 kernel bandwidth: the distance between adjacent orientation
/// anchors on the unit circle, `2·sin(π/n1)`.
pub fn alpha1(n1: usize) -> Result<f64> {
    if n1 < 2 {
        return Err(invalid_param!("n1 must be >= 2, got {n1}"));
    }
    let t = 2.0 * PI / n1 as f64;
    let c = 1.0 - libm::cos(t);
    let s = libm::sin(t);
    Ok(libm::sqrt(c * c + s * s))
}

/// Orientation anchors `θ_j = 2jπ/n1`, `j = 1..=n1`.
pub fn orientation_anchors(n1: usize) -> Vec<(f64, f64)> {
    (1..=n1)
        .map(|j| {
            let theta = 2.0 * j as f64 * PI / n1 as f64;
            (libm::cos(theta), libm::sin(theta))
        })
        .collect()
}

/// Per-pixel orientation embedding: channel `j` holds
/// `ρ·exp(−‖(cos θ_j, sin θ_j) − g/ρ‖² / α1²)` with `ρ = ‖g‖`; pixels with
/// `ρ = 0` embed to zero.
pub fn gradient_embed(gradients: &GradientField, n1: usize) -> Result<Tensor3> {
    let a1 = alpha1(n1)?;
    let inv_a2 = 1.0 / (a1 * a1);
    let anchors = orientation_anchors(n1);
    let (w, h) = (gradients.width, gradients.height);
    let mut out = Tensor3::zeros(h, w, n1);
    let plane = w * h;
    for i in 0..plane {
        let (gx, gy) = (gradients.gx[i] as f64, gradients.gy[i] as f64);
        let rho = libm::sqrt(gx * gx + gy * gy);
        if rho == 0.0 {
            continue;
        }
        let (ux, uy) = (gx / rho, gy / rho);
        for (j, &(c, s)) in anchors.iter().enumerate() {
            let d2 = (c - ux) * (c - ux) + (s - uy) * (s - uy);
            out.data[j * plane + i] = (rho * libm::exp(-d2 * inv_a2)) as f32;
        }
    }
    Ok(out)
}

/// Embedding followed by Gaussian pooling with factor `gamma1`.
pub fn layer1_forward(gradients: &GradientField, shape: &CknShape) -> Result<Tensor3> {
    if gradients.width != shape.patch_side || gradients.height != shape.patch_side {
        return Err(invalid_param!(
            "patch is {}x{}, expected {}x{}",
            gradients.width,
            gradients.height,
            shape.patch_side,
            shape.patch_side
        ));
    }
    let embedded = gradient_embed(gradients, shape.n1)?;
    pool_gaussian(&embedded, shape.gamma1, shape.layer1_offset())
}

/// Extracts every `side × side` sub-patch fully inside the map as a column.
///
/// Columns run row-major over sub-patch positions; rows run channel-major,
/// then row-major within the sub-patch.
pub fn im2col_subpatches(map: &Tensor3, side: usize) -> Result<Matrix> {
    if side == 0 || side > map.height || side > map.width {
        return Err(invalid_param!("sub-patch side {side} does not fit a {}x{} map", map.height, map.width));
    }
    let (ph, pw) = (map.height - side + 1, map.width - side + 1);
    let rows = map.channels * side * side;
    let cols = ph * pw;
    let mut m = Matrix::zeros(rows, cols);
    for c in 0..map.channels {
        for dy in 0..side {
            for dx in 0..side {
                let r = (c * side + dy) * side + dx;
                let dst = &mut m.data[r * cols..(r + 1) * cols];
                for py in 0..ph {
                    let src = &map.data[map.index(py + dy, dx, c)..map.index(py + dy, dx + pw, c)];
                    dst[py * pw..(py + 1) * pw].copy_from_slice(src);
                }
            }
        }
    }
    Ok(m)
}

/// Pre-pooling layer-2 activations, `n2 × positions`.
///
/// Columns of `m2` are L2-normalized and entry `(j, p)` is
/// `exp(W2[j]·x̃_p + bias[j])·‖x_p‖`. Zero columns give zero activations.
pub fn layer2_activations(m2: &Matrix, w2: &Matrix, bias: &[f32]) -> Result<Matrix> {
    let (normalized, norms) = l2_normalize_columns(m2, NORM_EPSILON);
    let mut e = affine_map(w2, bias, &normalized)?;
    for r in 0..e.rows {
        let row = &mut e.data[r * e.cols..(r + 1) * e.cols];
        for (v, &n) in row.iter_mut().zip(&norms) {
            *v = if n == 0.0 { 0.0 } else { (libm::exp(*v as f64) * n as f64) as f32 };
        }
    }
    Ok(e)
}

/// Layer 2 with explicit parameters: activations with the shared bias `b2`,
/// reshaped to a `side × side × n2` map and pooled with factor `gamma2`.
pub fn layer2_embed(m2: &Matrix, shape: &CknShape, w2: &Matrix, b2: f32) -> Result<Tensor3> {
    if m2.rows != shape.subpatch_dim() || w2.cols != m2.rows || w2.rows != shape.n2 {
        return Err(invalid_param!(
            "layer-2 input is {}x{}, W2 is {}x{}, expected {} rows",
            m2.rows,
            m2.cols,
            w2.rows,
            w2.cols,
            shape.subpatch_dim()
        ));
    }
    let side = shape.layer2_side();
    if m2.cols != side * side {
        return Err(invalid_param!("layer-2 input has {} columns, expected {}", m2.cols, side * side));
    }
    let e = layer2_activations(m2, w2, &alloc::vec![b2; shape.n2])?;
    let map = Tensor3::from_vec(side, side, shape.n2, e.data)?;
    pool_gaussian(&map, shape.gamma2, 0)
}

pub fn layer2_forward(m2: &Matrix, model: &CknModel) -> Result<Tensor3> {
    layer2_embed(m2, &model.shape, &model.w2, model.b2)
}

/// Flattened layer-2 output (channel-major over pooled positions), before
/// PCA.
pub fn raw_descriptor(gradients: &GradientField, shape: &CknShape, w2: &Matrix, b2: f32) -> Result<Vec<f32>> {
    let l1 = layer1_forward(gradients, shape)?;
    let m2 = im2col_subpatches(&l1, shape.sub2_side)?;
    Ok(layer2_embed(&m2, shape, w2, b2)?.data)
}

/// Full descriptor: raw features, mean removal, PCA projection, L2
/// normalization.
pub fn describe(gradients: &GradientField, model: &CknModel) -> Result<Descriptor> {
    let raw = raw_descriptor(gradients, &model.shape, &model.w2, model.b2)?;
    Ok(Descriptor { values: project(&raw, model)?, source_keypoint: None })
}

/// Centers, projects and normalizes a raw descriptor.
pub fn project(raw: &[f32], model: &CknModel) -> Result<Vec<f32>> {
    if raw.len() != model.pca_mean.len() {
        return Err(invalid_param!("raw descriptor has {} values, model expects {}", raw.len(), model.pca_mean.len()));
    }
    let centered: Vec<f32> = raw.iter().zip(&model.pca_mean).map(|(v, m)| v - m).collect();
    let proj: Vec<f64> = (0..model.pca_proj.rows).map(|r| dot(model.pca_proj.row(r), &centered)).collect();
    let norm = libm::sqrt(proj.iter().map(|v| v * v).sum::<f64>());
    if norm == 0.0 {
        return Ok(alloc::vec![0.0; proj.len()]);
    }
    Ok(proj.iter().map(|v| (v / norm) as f32).collect())
}
