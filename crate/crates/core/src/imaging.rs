//! Rasters, luminance, gradient fields and scale-adaptive patch extraction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::keypoints::Keypoint;

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(invalid_input!(
                "rgb buffer of {} bytes does not match {width}x{height}",
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, p: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&p);
    }

    /// Luminance `(0.299R + 0.587G + 0.114B) / 255`.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let l = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
                l.clamp(0.0, 1.0) as f32
            })
            .collect();
        GrayImage { width: self.width, height: self.height, pixels }
    }

    /// Bilinear sample of all three channels at a continuous position.
    /// Coordinates must lie inside `[0, w-1] × [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, self.width, self.height);
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let at = |xx: usize, yy: usize| self.data[3 * (yy * self.width + xx) + ch] as f64;
            *o = lerp2(at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1), fx, fy);
        }
        out
    }
}

/// Single-channel luminance raster with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(invalid_input!(
                "{} pixels do not match {width}x{height}",
                pixels.len()
            ));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid_input!("luminance values must lie in [0, 1]"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear sample; coordinates must lie inside the image.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        sample_plane(&self.pixels, self.width, self.height, x, y)
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Per-pixel gradient pair `(G_x, G_y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, gx: vec![0.0; width * height], gy: vec![0.0; width * height] }
    }

    pub fn from_planes(width: usize, height: usize, gx: Vec<f32>, gy: Vec<f32>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(invalid_input!("gradient planes do not match {width}x{height}"));
        }
        if gx.iter().chain(&gy).any(|v| !v.is_finite()) {
            return Err(invalid_input!("gradient field contains non-finite values"));
        }
        Ok(Self { width, height, gx, gy })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    /// Multiplies both planes by `c`.
    pub fn scaled(&self, c: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            gx: self.gx.iter().map(|v| v * c).collect(),
            gy: self.gy.iter().map(|v| v * c).collect(),
        }
    }
}

#[inline]
fn bilinear_cell(x: f64, y: f64, w: usize, h: usize) -> (usize, usize, f64, f64) {
    // The cell's top-left corner is clamped so x = w-1 still has a right neighbor.
    let x0 = (libm::floor(x) as isize).clamp(0, w.saturating_sub(2) as isize) as usize;
    let y0 = (libm::floor(y) as isize).clamp(0, h.saturating_sub(2) as isize) as usize;
    (x0, y0, x - x0 as f64, y - y0 as f64)
}

#[inline]
fn lerp2(v00: f64, v10: f64, v01: f64, v11: f64, fx: f64, fy: f64) -> f64 {
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Bilinear sample of a row-major plane. Requires `w, h >= 2`.
#[inline]
pub fn sample_plane(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (x0, y0, fx, fy) = bilinear_cell(x, y, w, h);
    let at = |xx: usize, yy: usize| plane[yy * w + xx] as f64;
    if fx == 0.0 && fy == 0.0 {
        return at(x0, y0);
    }
    lerp2(at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1), fx, fy)
}

/// Centered differences in the interior, one-sided differences on the border.
pub fn gradients(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = (img.width, img.height);
    if w < 2 || h < 2 {
        return Err(invalid_input!("gradients need at least 2x2 pixels, got {w}x{h}"));
    }
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let dx = if x == 0 {
                img.at(1, y) - img.at(0, y)
            } else if x == w - 1 {
                img.at(w - 1, y) - img.at(w - 2, y)
            } else {
                (img.at(x + 1, y) - img.at(x - 1, y)) / 2.0
            };
            let dy = if y == 0 {
                img.at(x, 1) - img.at(x, 0)
            } else if y == h - 1 {
                img.at(x, h - 1) - img.at(x, h - 2)
            } else {
                (img.at(x, y + 1) - img.at(x, y - 1)) / 2.0
            };
            gx[y * w + x] = dx;
            gy[y * w + x] = dy;
        }
    }
    Ok(GradientField { width: w, height: h, gx, gy })
}

/// Side of the source window sampled for a keypoint: `round((out_side−1)·
/// scale/window_scale) + 1`, at least 2. A keypoint at `window_scale` is
/// cropped pixel for pixel.
pub fn window_side(out_side: usize, scale: f64, window_scale: f64) -> usize {
    let span = libm::round((out_side - 1) as f64 * scale / window_scale);
    if span.is_finite() && span >= 1.0 {
        span as usize + 1
    } else {
        2
    }
}

/// Whether the window for a keypoint lies fully inside a `width × height`
/// image.
pub fn window_fits(kp: &Keypoint, out_side: usize, window_scale: f64, width: usize, height: usize) -> bool {
    let side = window_side(out_side, kp.scale, window_scale);
    let half = (side - 1) as f64 / 2.0;
    kp.x - half >= 0.0
        && kp.y - half >= 0.0
        && kp.x + half <= (width - 1) as f64
        && kp.y + half <= (height - 1) as f64
}

/// Crops the gradient window around `kp` and resamples it to
/// `out_side × out_side`.
///
/// The window side follows [`window_side`]. Gradient values are multiplied
/// by the sampling step so they stay derivatives with respect to output
/// pixels.
pub fn extract_patch(
    field: &GradientField,
    kp: &Keypoint,
    out_side: usize,
    window_scale: f64,
) -> Result<GradientField> {
    if out_side < 2 {
        return Err(invalid_param!("patch side must be >= 2"));
    }
    if !(window_scale > 0.0) {
        return Err(invalid_param!("window scale must be positive"));
    }
    if !window_fits(kp, out_side, window_scale, field.width, field.height) {
        return Err(Error::OutOfBounds(alloc::format!(
            "window around ({:.1}, {:.1}) at scale {:.2} leaves the {}x{} image",
            kp.x,
            kp.y,
            kp.scale,
            field.width,
            field.height
        )));
    }
    let side = window_side(out_side, kp.scale, window_scale);
    let half_out = (out_side - 1) as f64 / 2.0;
    let step = (side - 1) as f64 / (out_side - 1) as f64;
    let ratio = step as f32;
    let mut out = GradientField::zeros(out_side, out_side);
    for v in 0..out_side {
        let sy = kp.y + (v as f64 - half_out) * step;
        for u in 0..out_side {
            let sx = kp.x + (u as f64 - half_out) * step;
            let i = v * out_side + u;
            let gx = sample_plane(&field.gx, field.width, field.height, sx, sy) as f32;
            let gy = sample_plane(&field.gy, field.width, field.height, sx, sy) as f32;
            if side == out_side {
                out.gx[i] = gx;
                out.gy[i] = gy;
            } else {
                out.gx[i] = gx * ratio;
                out.gy[i] = gy * ratio;
            }
        }
    }
    Ok(out)
}

/// Sampled Gaussian of standard deviation `sigma`, radius `ceil(3σ)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f32> {
    let radius = libm::ceil(3.0 * sigma).max(1.0) as i64;
    let mut taps: Vec<f64> =
        (-radius..=radius).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps.into_iter().map(|t| t as f32).collect()
}

/// Separable Gaussian blur of a plane with replicated borders.
pub fn blur_plane(plane: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (t, &k) in taps.iter().enumerate() {
                let sx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                acc += k * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

/// Keeps every second pixel along both axes.
pub fn decimate(plane: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(plane[y * w + x]);
        }
    }
    (out, nw, nh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn random_gray(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..w * h).map(|_| (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32).collect();
        GrayImage::new(w, h, pixels).unwrap()
    }

    fn kp(x: f64, y: f64, scale: f64) -> Keypoint {
        Keypoint { x, y, scale, score: 1.0 }
    }

    #[test]
    fn gray_conversion_extremes() {
        let white = RgbImage::from_vec(2, 2, vec![255; 12]).unwrap().to_gray();
        assert!(white.pixels.iter().all(|&v| v == 1.0));
        let black = RgbImage::new(3, 1).to_gray();
        assert!(black.pixels.iter().all(|&v| v == 0.0));
        assert_eq!((black.width, black.height), (3, 1));
    }

    #[test]
    fn ramp_gradient() {
        let w = 10;
        let pixels = (0..w * 4).map(|i| (i % w) as f32 / w as f32).collect();
        let g = gradients(&GrayImage::new(w, 4, pixels).unwrap()).unwrap();
        for y in 0..4 {
            for x in 0..w {
                let (gx, gy) = g.at(x, y);
                assert!((gx - 0.1).abs() < 1e-6);
                assert_eq!(gy, 0.0);
            }
        }
    }

    #[test]
    fn constant_image_zero_gradient() {
        let g = gradients(&GrayImage::constant(8, 5, 0.3)).unwrap();
        assert!(g.gx.iter().chain(&g.gy).all(|&v| v == 0.0));
        assert!(gradients(&GrayImage::constant(1, 5, 0.3)).is_err());
    }

    #[test]
    fn gradient_matches_naive_loop() {
        let img = random_gray(13, 9, 3);
        let g = gradients(&img).unwrap();
        let (w, h) = (13isize, 9isize);
        let at = |x: isize, y: isize| img.at(x as usize, y as usize);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = ((x - 1).max(0), (x + 1).min(w - 1));
                let (yu, yd) = ((y - 1).max(0), (y + 1).min(h - 1));
                let ex = (at(xr, y) - at(xl, y)) / (xr - xl) as f32;
                let ey = (at(x, yd) - at(x, yu)) / (yd - yu) as f32;
                assert_eq!(g.at(x as usize, y as usize), (ex, ey));
            }
        }
    }

    #[test]
    fn gradient_is_linear() {
        let a = random_gray(9, 9, 1);
        let b = random_gray(9, 9, 2);
        let sum = GrayImage::new(9, 9, a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x + y) / 2.0).collect())
            .unwrap();
        let (ga, gb, gs) = (gradients(&a).unwrap(), gradients(&b).unwrap(), gradients(&sum).unwrap());
        for i in 0..81 {
            assert!(((ga.gx[i] + gb.gx[i]) / 2.0 - gs.gx[i]).abs() < 1e-6);
            assert!(((ga.gy[i] + gb.gy[i]) / 2.0 - gs.gy[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn window_scale_patch_is_direct_crop() {
        let g = gradients(&random_gray(80, 70, 5)).unwrap();
        let p = extract_patch(&g, &kp(40.0, 35.0, 1.6), 51, 1.6).unwrap();
        assert_eq!((p.width, p.height), (51, 51));
        for v in 0..51 {
            for u in 0..51 {
                assert_eq!(p.at(u, v), g.at(15 + u, 10 + v));
            }
        }
    }

    #[test]
    fn window_span_is_proportional_to_scale() {
        assert_eq!(window_side(51, 1.6, 1.6), 51);
        assert_eq!(window_side(51, 3.2, 1.6), 101);
        assert_eq!(window_side(51, 0.8, 1.6), 26);
        assert_eq!(window_side(51, 0.0, 1.6), 2);
    }

    #[test]
    fn resampled_constant_field_stays_constant() {
        let n = 200;
        let g = GradientField::from_planes(n, n, vec![0.25; n * n], vec![-0.5; n * n]).unwrap();
        let p = extract_patch(&g, &kp(100.0, 100.0, 3.2), 51, 1.6).unwrap();
        let ratio = 2.0;
        for i in 0..51 * 51 {
            assert!((p.gx[i] - 0.25 * ratio).abs() < 1e-6);
            assert!((p.gy[i] + 0.5 * ratio).abs() < 1e-6);
        }
        assert_eq!((p.width, p.height), (51, 51));
    }

    #[test]
    fn out_of_bounds_window() {
        let g = GradientField::zeros(60, 60);
        assert!(matches!(extract_patch(&g, &kp(10.0, 30.0, 1.6), 51, 1.6), Err(Error::OutOfBounds(_))));
        assert!(extract_patch(&g, &kp(30.0, 30.0, 1.6), 51, 1.6).is_ok());
    }

    #[test]
    fn blur_preserves_constant() {
        let p = vec![0.7f32; 20 * 10];
        let b = blur_plane(&p, 20, 10, 2.0);
        assert!(b.iter().all(|v| (v - 0.7).abs() < 1e-5));
    }
}
