//! Difference-of-Gaussians interest points and the segmentation-based
//! keypoint distribution strategy.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid_input, Result};
use crate::imaging::{blur_plane, decimate, window_fits, GrayImage};
use crate::segmentation::LabelMap;

/// A scored interest point in base-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Gaussian scale σ in base-image pixels.
    pub scale: f64,
    /// DoG response magnitude.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DogParams {
    pub contrast_threshold: f32,
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// `-1` starts the pyramid on a 2× upsampled image, `0` on the input.
    pub first_octave: i32,
    pub edge_ratio: f32,
    /// Blur of the first pyramid level.
    pub sigma0: f64,
    /// Blur already present in the input image.
    pub input_blur: f64,
    /// Side of the resampled descriptor patch.
    pub patch_side: usize,
    /// Half-width of the source window in units of the keypoint scale.
    /// Keypoints whose window leaves the image are dropped.
    pub patch_extent: f64,
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.0,
            octaves: 4,
            scales_per_octave: 3,
            first_octave: -1,
            edge_ratio: 10.0,
            sigma0: 1.6,
            input_blur: 0.5,
            patch_side: 51,
            patch_extent: 6.0,
        }
    }
}

impl DogParams {
    /// Scale whose source window is exactly `patch_side` pixels wide.
    pub fn window_scale(&self) -> f64 {
        (self.patch_side - 1) as f64 / (2.0 * self.patch_extent)
    }
}

struct Level {
    w: usize,
    data: Vec<f32>,
}

impl Level {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

fn is_extremum(dogs: &[Level], i: usize, x: usize, y: usize) -> bool {
    let v = dogs[i].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for level in &dogs[i - 1..=i + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if core::ptr::eq(level, &dogs[i]) && xx == x && yy == y {
                    continue;
                }
                let n = level.at(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

fn passes_edge_test(d: &Level, x: usize, y: usize, r: f32) -> bool {
    let c = d.at(x, y);
    let dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * c;
    let dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * c;
    let dxy = (d.at(x + 1, y + 1) - d.at(x + 1, y - 1) - d.at(x - 1, y + 1) + d.at(x - 1, y - 1)) / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * r < (r + 1.0) * (r + 1.0) * det
}

/// Detects scale-space extrema of the difference-of-Gaussians stack.
///
/// Extrema are strict 3×3×3 maxima or minima with `|D| > contrast_threshold`
/// that pass the Hessian edge test. Positions are pixel-accurate and mapped
/// back to base resolution; the score is `|D|`.
pub fn detect_dog(img: &GrayImage, params: &DogParams) -> Result<Vec<Keypoint>> {
    if img.width < 32 || img.height < 32 {
        return Err(invalid_input!("DoG detection needs at least 32x32 pixels, got {}x{}", img.width, img.height));
    }
    if params.scales_per_octave == 0 || params.octaves == 0 {
        return Err(invalid_input!("octaves and scales per octave must be positive"));
    }
    if !(-1..=0).contains(&params.first_octave) {
        return Err(invalid_input!("first octave must be -1 or 0, got {}", params.first_octave));
    }
    let s = params.scales_per_octave;
    let sigmas: Vec<f64> = (0..s + 3).map(|i| params.sigma0 * libm::pow(2.0, i as f64 / s as f64)).collect();
    let window_scale = params.window_scale();

    let (mut w, mut h, start) = if params.first_octave < 0 {
        (2 * img.width - 1, 2 * img.height - 1, upsample(&img.pixels, img.width, img.height))
    } else {
        (img.width, img.height, img.pixels.clone())
    };
    let input_blur = params.input_blur * libm::pow(2.0, -params.first_octave as f64);
    let pre = (params.sigma0 * params.sigma0 - input_blur * input_blur).max(0.0);
    let mut base = blur_plane(&start, w, h, libm::sqrt(pre));
    let mut out = Vec::new();
    for o in 0..params.octaves {
        let octave = o as i32 + params.first_octave;
        if w < 8 || h < 8 {
            break;
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(base.clone());
        for i in 1..s + 3 {
            let inc = libm::sqrt(sigmas[i] * sigmas[i] - sigmas[i - 1] * sigmas[i - 1]);
            let next = blur_plane(&gauss[i - 1], w, h, inc);
            gauss.push(next);
        }
        let dogs: Vec<Level> = gauss
            .windows(2)
            .map(|pair| Level { w, data: pair[1].iter().zip(&pair[0]).map(|(a, b)| a - b).collect() })
            .collect();
        let factor = libm::pow(2.0, octave as f64);
        for (i, dog) in dogs.iter().enumerate().take(s + 1).skip(1) {
            let scale = params.sigma0 * libm::pow(2.0, octave as f64 + i as f64 / s as f64);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = dog.at(x, y);
                    if v.abs() <= params.contrast_threshold || v == 0.0 {
                        continue;
                    }
                    if !is_extremum(&dogs, i, x, y) || !passes_edge_test(dog, x, y, params.edge_ratio) {
                        continue;
                    }
                    let kp = Keypoint { x: x as f64 * factor, y: y as f64 * factor, scale, score: v.abs() as f64 };
                    if window_fits(&kp, params.patch_side, window_scale, img.width, img.height) {
                        out.push(kp);
                    }
                }
            }
        }
        let (next, nw, nh) = decimate(&gauss[s], w, h);
        base = next;
        w = nw;
        h = nh;
    }
    Ok(out)
}

/// Bilinear 2× upsampling onto a `(2w−1) × (2h−1)` grid; even samples are
/// the input pixels.
fn upsample(plane: &[f32], w: usize, h: usize) -> Vec<f32> {
    let (nw, nh) = (2 * w - 1, 2 * h - 1);
    let mut out = vec![0.0f32; nw * nh];
    for y in 0..nh {
        let (y0, y1) = (y / 2, y.div_ceil(2));
        for x in 0..nw {
            let (x0, x1) = (x / 2, x.div_ceil(2));
            let v = plane[y0 * w + x0] + plane[y0 * w + x1] + plane[y1 * w + x0] + plane[y1 * w + x1];
            out[y * nw + x] = v / 4.0;
        }
    }
    out
}

/// Deterministic ranking: score descending, then `y`, then `x`, then scale.
fn rank_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.scale.total_cmp(&b.scale))
}

/// Region label under a keypoint (nearest pixel, clamped to the map).
pub fn keypoint_label(kp: &Keypoint, labels: &LabelMap) -> u32 {
    let x = (libm::round(kp.x).max(0.0) as usize).min(labels.width - 1);
    let y = (libm::round(kp.y).max(0.0) as usize).min(labels.height - 1);
    labels.label_at(x, y)
}

/// Number of top-ranked keypoints a region keeps by quota: round half up,
/// floored at zero.
fn quota(standard: f64) -> usize {
    libm::floor(standard + 0.5).max(0.0) as usize
}

/// Segmentation-based keypoint distribution.
///
/// Each region gets a standard share `m·area_i/total_area` of the `m` input
/// keypoints. Regions holding no more than their share keep everything;
/// larger regions keep their best `round(share)` keypoints plus every other
/// member scoring strictly above the global threshold, the score ranked
/// `round(λ·m)` in descending order. Output preserves input order.
pub fn distribute_keypoints(kps: &[Keypoint], labels: &LabelMap, lambda: f64) -> Vec<Keypoint> {
    let m = kps.len();
    if m == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<usize> = (0..m).collect();
    ranked.sort_by(|&a, &b| rank_order(&kps[a], &kps[b]));
    let rank = (libm::round(lambda * m as f64) as usize).clamp(1, m);
    let threshold = kps[ranked[rank - 1]].score;

    let areas = labels.areas();
    let total = (labels.width * labels.height) as f64;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.n_labels];
    // Ranked order makes every member list already sorted by score.
    for &i in &ranked {
        members[keypoint_label(&kps[i], labels) as usize].push(i);
    }

    let mut keep = vec![false; m];
    for (region, list) in members.iter().enumerate() {
        let standard = m as f64 * areas[region] as f64 / total;
        if list.len() as f64 <= standard {
            for &i in list {
                keep[i] = true;
            }
            continue;
        }
        let k = quota(standard).min(list.len());
        for &i in &list[..k] {
            keep[i] = true;
        }
        for &i in &list[k..] {
            if kps[i].score > threshold {
                keep[i] = true;
            }
        }
    }
    kps.iter().zip(&keep).filter(|(_, &k)| k).map(|(kp, _)| *kp).collect()
}
