//! Affine transforms and their robust estimation.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::error::{Error, Result};
use crate::linalg::solve3;
use crate::synthetic::index;

pub type Point = [f64; 2];

/// Accepted range for the determinant of the linear part.
pub const DET_RANGE: (f64, f64) = (0.1, 10.0);

/// Default bound on the ratio of the singular values of the linear part.
/// Copy-move forgeries are near-similarities; strongly anisotropic maps
/// mostly align smooth content by accident.
pub const MAX_ANISOTROPY: f64 = 2.0;

/// 2×3 matrix mapping `(x, y, 1)` to `(x', y')`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: Self = Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy]] }
    }

    /// Rotation by `theta` radians and isotropic scaling by `s` about `center`.
    pub fn similarity_about(center: Point, theta: f64, s: f64) -> Self {
        let (c, sn) = (s * libm::cos(theta), s * libm::sin(theta));
        let [cx, cy] = center;
        Self { m: [[c, -sn, cx - c * cx + sn * cy], [sn, c, cy - sn * cx - c * cy]] }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        [m[0][0] * p[0] + m[0][1] * p[1] + m[0][2], m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]]
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Ratio of the larger to the smaller singular value of the linear
    /// part; infinite when singular.
    pub fn anisotropy(&self) -> f64 {
        let [[a, b, _], [c, d, _]] = self.m;
        let e = a * a + b * b + c * c + d * d;
        let det = self.det().abs();
        let disc = libm::sqrt((e * e - 4.0 * det * det).max(0.0));
        let (hi, lo) = ((e + disc) / 2.0, (e - disc) / 2.0);
        if lo <= 0.0 {
            return f64::INFINITY;
        }
        libm::sqrt(hi / lo)
    }

    /// Admissible with anisotropy at most `max_anisotropy`.
    pub fn is_admissible_within(&self, max_anisotropy: f64) -> bool {
        self.is_admissible() && self.anisotropy() <= max_anisotropy
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Finite with determinant inside [`DET_RANGE`].
    pub fn is_admissible(&self) -> bool {
        let d = self.det();
        self.is_finite() && d >= DET_RANGE.0 && d <= DET_RANGE.1
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.abs() < 1e-12 || !d.is_finite() {
            return None;
        }
        let [[a, b, tx], [c, e, ty]] = self.m;
        let (ia, ib, ic, ie) = (e / d, -b / d, -c / d, a / d);
        Some(Self { m: [[ia, ib, -(ia * tx + ib * ty)], [ic, ie, -(ic * tx + ie * ty)]] })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m.iter().flatten().zip(other.m.iter().flatten()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn residual(&self, src: Point, dst: Point) -> f64 {
        let p = self.apply(src);
        libm::hypot(p[0] - dst[0], p[1] - dst[1])
    }

    /// Row-major 6 floats `[a, b, tx, c, d, ty]`.
    pub fn to_array(&self) -> [f64; 6] {
        let [[a, b, c], [d, e, f]] = self.m;
        [a, b, c, d, e, f]
    }

    /// Least-squares fit to `(src_i, dst_i)`, computed on centered
    /// coordinates. `None` when the sources are (near) collinear.
    pub fn fit(src: &[Point], dst: &[Point]) -> Option<Self> {
        if src.len() < 3 || src.len() != dst.len() {
            return None;
        }
        let n = src.len() as f64;
        let mean = |pts: &[Point]| {
            let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
            [s[0] / n, s[1] / n]
        };
        let (ms, md) = (mean(src), mean(dst));
        let mut ata = [[0.0; 3]; 3];
        let mut atx = [0.0; 3];
        let mut aty = [0.0; 3];
        for (s, d) in src.iter().zip(dst) {
            let r = [s[0] - ms[0], s[1] - ms[1], 1.0];
            let (u, v) = (d[0] - md[0], d[1] - md[1]);
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += r[i] * r[j];
                }
                atx[i] += r[i] * u;
                aty[i] += r[i] * v;
            }
        }
        let rx = solve3(ata, atx)?;
        let ry = solve3(ata, aty)?;
        // Undo the centering: x' = A(x − ms) + t + md.
        let tx = rx[2] + md[0] - rx[0] * ms[0] - rx[1] * ms[1];
        let ty = ry[2] + md[1] - ry[0] * ms[0] - ry[1] * ms[1];
        let t = Self { m: [[rx[0], rx[1], tx], [ry[0], ry[1], ty]] };
        t.is_finite().then_some(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tol: f64,
    pub min_inliers: usize,
    /// Hypotheses with a larger [`AffineTransform::anisotropy`] are skipped.
    pub max_anisotropy: f64,
    /// Allowed factor between a keypoint pair's scale ratio and the local
    /// scale of the transform; used by the region-pair estimator.
    pub scale_tolerance: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 2000, inlier_tol: 3.0, min_inliers: 6, max_anisotropy: MAX_ANISOTROPY, scale_tolerance: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacFit {
    pub transform: AffineTransform,
    /// Indices of correspondences within tolerance of `transform`.
    pub inliers: Vec<usize>,
}

fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs() / 2.0
}

/// Minimum triangle area (px²) of a usable minimal sample.
const MIN_SAMPLE_AREA: f64 = 1.0;

fn consensus<F: Fn(&AffineTransform, usize) -> bool>(
    t: &AffineTransform,
    src: &[Point],
    dst: &[Point],
    tol: f64,
    consistent: &F,
) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut err = 0.0;
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = t.residual(*s, *d);
        if r <= tol && consistent(t, i) {
            inliers.push(i);
            err += r * r;
        }
    }
    (inliers, err)
}

/// Residual multiple of the median beyond which a consensus point is
/// dropped from the final fit.
const TRIM_FACTOR: f64 = 3.0;

/// Residual (px) below which a point is never trimmed.
const TRIM_FLOOR: f64 = 0.1;

/// Most trimming passes of the final fit.
const TRIM_ROUNDS: usize = 5;

/// Least squares on the consensus set, repeatedly dropping points whose
/// residual exceeds `TRIM_FACTOR` times the median residual. A stray point
/// that fell inside the tolerance by chance would otherwise bias the fit.
/// Never keeps fewer than half the points or fewer than 3.
fn trimmed_fit(src: &[Point], dst: &[Point]) -> Option<AffineTransform> {
    let mut keep: Vec<usize> = (0..src.len()).collect();
    let mut t = AffineTransform::fit(src, dst)?;
    for _ in 0..TRIM_ROUNDS {
        let r: Vec<f64> = keep.iter().map(|&i| t.residual(src[i], dst[i])).collect();
        let mut sorted = r.clone();
        sorted.sort_by(f64::total_cmp);
        let cutoff = (TRIM_FACTOR * sorted[sorted.len() / 2]).max(TRIM_FLOOR);
        let next: Vec<usize> = keep.iter().zip(&r).filter(|(_, &r)| r <= cutoff).map(|(&i, _)| i).collect();
        if next.len() == keep.len() || next.len() < 3 || 2 * next.len() < src.len() {
            break;
        }
        let s: Vec<Point> = next.iter().map(|&i| src[i]).collect();
        let d: Vec<Point> = next.iter().map(|&i| dst[i]).collect();
        let Some(fit) = AffineTransform::fit(&s, &d) else { break };
        t = fit;
        keep = next;
    }
    Some(t)
}

/// Seeded RANSAC over 3-point minimal samples.
///
/// Hypotheses with a degenerate sample, an inadmissible determinant or
/// excess anisotropy are skipped. The best hypothesis (most inliers, then
/// least squared error) is refit by trimmed least squares on its inliers.
/// Returns `Ok(None)` when no admissible model reaches `min_inliers`.
pub fn ransac_affine(src: &[Point], dst: &[Point], params: &RansacParams, seed: u64) -> Result<Option<RansacFit>> {
    ransac_affine_with(src, dst, params, seed, |_, _| true)
}

/// [`ransac_affine`] where correspondence `i` only counts as an inlier of
/// `t` if `consistent(t, i)` also holds.
pub fn ransac_affine_with<F: Fn(&AffineTransform, usize) -> bool>(
    src: &[Point],
    dst: &[Point],
    params: &RansacParams,
    seed: u64,
    consistent: F,
) -> Result<Option<RansacFit>> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(alloc::format!("{} sources for {} targets", src.len(), dst.len())));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::InsufficientData(alloc::format!("RANSAC needs 3 correspondences, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(AffineTransform, Vec<usize>, f64)> = None;
    for _ in 0..params.iterations {
        let a = index(&mut rng, n);
        let mut b = index(&mut rng, n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = index(&mut rng, n - 2);
        for lo in [a.min(b), a.max(b)] {
            if c >= lo {
                c += 1;
            }
        }
        let (s3, d3) = ([src[a], src[b], src[c]], [dst[a], dst[b], dst[c]]);
        if triangle_area(s3[0], s3[1], s3[2]) < MIN_SAMPLE_AREA || triangle_area(d3[0], d3[1], d3[2]) < MIN_SAMPLE_AREA {
            continue;
        }
        let Some(t) = AffineTransform::fit(&s3, &d3) else { continue };
        if !t.is_admissible_within(params.max_anisotropy) {
            continue;
        }
        let (inl, err) = consensus(&t, src, dst, params.inlier_tol, &consistent);
        let better = match &best {
            None => true,
            Some((_, bi, be)) => inl.len() > bi.len() || (inl.len() == bi.len() && err < *be),
        };
        if better {
            best = Some((t, inl, err));
        }
    }
    let Some((t, inliers, _)) = best else { return Ok(None) };
    if inliers.len() < params.min_inliers.max(3) {
        return Ok(None);
    }
    let s: Vec<Point> = inliers.iter().map(|&i| src[i]).collect();
    let d: Vec<Point> = inliers.iter().map(|&i| dst[i]).collect();
    let refit = trimmed_fit(&s, &d).filter(|r| r.is_admissible_within(params.max_anisotropy)).unwrap_or(t);
    let (refit_inliers, _) = consensus(&refit, src, dst, params.inlier_tol, &consistent);
    let (transform, inliers) =
        if refit_inliers.len() >= inliers.len() { (refit, refit_inliers) } else { (t, inliers) };
    Ok(Some(RansacFit { transform, inliers }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{range, unit};
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn synthetic(t: &AffineTransform, n: usize, outlier_frac: f64, seed: u64) -> (Vec<Point>, Vec<Point>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut clean = Vec::new();
        let n_out = (n as f64 * outlier_frac).round() as usize;
        for i in 0..n {
            let s = [range(&mut rng, 0.0, 256.0), range(&mut rng, 0.0, 256.0)];
            if i < n_out {
                src.push(s);
                dst.push([range(&mut rng, 0.0, 256.0), range(&mut rng, 0.0, 256.0)]);
                clean.push(false);
            } else {
                src.push(s);
                dst.push(t.apply(s));
                clean.push(true);
            }
        }
        (src, dst, clean)
    }

    #[test]
    fn exact_recovery_without_noise() {
        let t = AffineTransform { m: [[1.1, 0.2, 30.0], [-0.15, 0.95, -12.0]] };
        let (src, dst, _) = synthetic(&t, 20, 0.0, 1);
        let fit = ransac_affine(&src, &dst, &RansacParams::default(), 0).unwrap().unwrap();
        assert!(fit.transform.max_abs_diff(&t) < 1e-6);
        assert_eq!(fit.inliers.len(), 20);
    }

    #[test]
    fn recovery_with_outliers() {
        let t = AffineTransform::similarity_about([128.0, 128.0], 0.3, 1.2);
        let (src, dst, clean) = synthetic(&t, 20, 0.3, 2);
        let fit = ransac_affine(&src, &dst, &RansacParams::default(), 5).unwrap().unwrap();
        assert!(fit.transform.max_abs_diff(&t) < 1e-2);
        for (i, c) in clean.iter().enumerate() {
            if *c {
                assert!(fit.inliers.contains(&i));
            }
        }
    }

    #[test]
    fn stray_point_inside_tolerance_does_not_bias_the_fit() {
        let t = AffineTransform { m: [[0.9, -0.2, 14.0], [0.25, 1.05, -8.0]] };
        let (mut src, mut dst, _) = synthetic(&t, 40, 0.0, 8);
        let p = [100.0, 60.0];
        let q = t.apply(p);
        src.push(p);
        dst.push([q[0] + 1.8, q[1] + 0.5]);
        let fit = ransac_affine(&src, &dst, &RansacParams::default(), 1).unwrap().unwrap();
        assert_eq!(fit.inliers.len(), 41);
        assert!(fit.transform.max_abs_diff(&t) < 1e-6, "{:?}", fit.transform);
    }

    #[test]
    fn collinear_and_small_inputs_fail() {
        let src = [[0.0, 0.0], [10.0, 10.0], [20.0, 20.0]];
        let dst = [[5.0, 0.0], [15.0, 10.0], [25.0, 20.0]];
        assert_eq!(ransac_affine(&src, &dst, &RansacParams::default(), 0).unwrap(), None);
        assert!(matches!(
            ransac_affine(&src[..2], &dst[..2], &RansacParams::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn degenerate_determinant_rejected() {
        let t = AffineTransform { m: [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0]] };
        let (src, dst, _) = synthetic(&t, 12, 0.0, 3);
        assert_eq!(ransac_affine(&src, &dst, &RansacParams::default(), 0).unwrap(), None);
    }

    #[test]
    fn inverse_round_trip() {
        let t = AffineTransform::similarity_about([40.0, 60.0], 0.7, 0.8);
        let inv = t.inverse().unwrap();
        let p = [13.0, -7.5];
        let q = inv.apply(t.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        assert_eq!(AffineTransform { m: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]] }.inverse(), None);
    }

    #[test]
    fn deterministic_for_seed() {
        let t = AffineTransform::translation(40.0, -3.0);
        let (src, dst, _) = synthetic(&t, 30, 0.4, 9);
        let p = RansacParams::default();
        assert_eq!(ransac_affine(&src, &dst, &p, 11).unwrap(), ransac_affine(&src, &dst, &p, 11).unwrap());
    }

    #[test]
    fn anisotropy_of_similarity_and_stretch() {
        let sim = AffineTransform::similarity_about([5.0, -3.0], 1.1, 0.7);
        assert!((sim.anisotropy() - 1.0).abs() < 1e-9);
        let stretch = AffineTransform { m: [[2.0, 0.0, 0.0], [0.0, 0.5, 0.0]] };
        assert!((stretch.anisotropy() - 4.0).abs() < 1e-9);
        assert!(stretch.is_admissible() && !stretch.is_admissible_within(MAX_ANISOTROPY));
        let singular = AffineTransform { m: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]] };
        assert!(singular.anisotropy().is_infinite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn clean_points_are_inliers(seed in 0u64..1000, frac in 0.0f64..=0.4, extra in 12usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = range(&mut rng, -0.5, 0.5);
            let s = range(&mut rng, 0.7, 1.4);
            let t = AffineTransform::similarity_about([unit(&mut rng) * 200.0, 100.0], theta, s);
            // `extra` clean points plus the requested outlier share.
            let n = (extra as f64 / (1.0 - frac)).ceil() as usize;
            let (src, dst, clean) = synthetic(&t, n, frac, seed + 1);
            let fit = ransac_affine(&src, &dst, &RansacParams::default(), seed).unwrap().unwrap();
            for (i, c) in clean.iter().enumerate() {
                if *c {
                    prop_assert!(fit.inliers.contains(&i));
                }
            }
        }

        #[test]
        fn refit_does_not_increase_inlier_error(seed in 0u64..1000) {
            let t = AffineTransform::similarity_about([100.0, 100.0], 0.2, 1.0);
            let (src, mut dst, _) = synthetic(&t, 30, 0.2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
            for d in dst.iter_mut() {
                d[0] += range(&mut rng, -1.0, 1.0);
                d[1] += range(&mut rng, -1.0, 1.0);
            }
            let s3 = [src[10], src[20], src[29]];
            let d3 = [dst[10], dst[20], dst[29]];
            let minimal = AffineTransform::fit(&s3, &d3).unwrap();
            let (inl, err) = consensus(&minimal, &src, &dst, 3.0, &|_, _| true);
            let s: Vec<Point> = inl.iter().map(|&i| src[i]).collect();
            let d: Vec<Point> = inl.iter().map(|&i| dst[i]).collect();
            let refit = AffineTransform::fit(&s, &d).unwrap();
            let refit_err: f64 = inl.iter().map(|&i| refit.residual(src[i], dst[i]).powi(2)).sum();
            prop_assert!(refit_err <= err + 1e-9);
            let _ = vec![0u8];
        }
    }
}
