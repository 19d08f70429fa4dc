//! Two-stage matching: cross-region descriptor kNN and RANSAC, then dense
//! ZNCC verification of every proposed region pair.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::ckn::Descriptor;
use crate::error::{invalid_input, Result};
use crate::imaging::GrayImage;
use crate::kdtree::KdTree;
use crate::keypoints::{keypoint_label, Keypoint};
use crate::mask::TamperMap;
use crate::ransac::{ransac_affine_with, AffineTransform, Point, RansacParams, MAX_ANISOTROPY};
use crate::segmentation::LabelMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// Always the smaller keypoint index.
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionPair {
    /// `label_i < label_j`.
    pub label_i: u32,
    pub label_j: u32,
    pub correspondences: Vec<Correspondence>,
    /// Maps points of region `label_i` onto region `label_j`.
    pub transform: Option<AffineTransform>,
    /// First-stage RANSAC inlier count.
    pub inliers: usize,
    pub verified: bool,
    /// Marked source pixels and their warped targets.
    pub dense_mask: Option<TamperMap>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub knn: usize,
    pub max_distance: f64,
    /// Matches closer than this in the image (pixels) are discarded.
    pub min_spatial: f64,
    pub min_matches: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { knn: 5, max_distance: 0.9, min_spatial: 16.0, min_matches: 6 }
    }
}

pub fn build_index(descriptors: &[Descriptor]) -> Result<KdTree> {
    let points: Vec<Vec<f32>> = descriptors.iter().map(|d| d.values.clone()).collect();
    KdTree::build(&points)
}

/// For each keypoint, its `knn` nearest descriptors among keypoints lying in
/// other regions at least `min_spatial` pixels away, kept when within
/// `max_distance`. Symmetric duplicates collapse onto `index_a < index_b`.
/// Output is sorted by `(index_a, index_b)`.
pub fn knn_cross_region(
    index: &KdTree,
    keypoints: &[Keypoint],
    labels: &LabelMap,
    params: &MatchParams,
) -> Result<Vec<Correspondence>> {
    if keypoints.len() != index.len() {
        return Err(invalid_input!("{} keypoints for {} indexed descriptors", keypoints.len(), index.len()));
    }
    let kp_labels: Vec<u32> = keypoints.iter().map(|k| keypoint_label(k, labels)).collect();
    let min_sq = params.min_spatial * params.min_spatial;
    let mut found: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (q, kp) in keypoints.iter().enumerate() {
        let keep = |i: usize| {
            let o = &keypoints[i];
            let (dx, dy) = (o.x - kp.x, o.y - kp.y);
            kp_labels[i] != kp_labels[q] && dx * dx + dy * dy >= min_sq
        };
        for n in index.knn_filtered(index.point(q), params.knn, keep) {
            if n.distance > params.max_distance {
                break;
            }
            let key = (q.min(n.index), q.max(n.index));
            found.entry(key).or_insert(n.distance);
        }
    }
    Ok(found.into_iter().map(|((a, b), distance)| Correspondence { index_a: a, index_b: b, distance }).collect())
}

/// Groups correspondences by unordered region pair; keeps groups with at
/// least `min_matches` members. Sorted by `(label_i, label_j)`.
pub fn propose_region_pairs(
    correspondences: &[Correspondence],
    keypoints: &[Keypoint],
    labels: &LabelMap,
    min_matches: usize,
) -> Vec<RegionPair> {
    let mut groups: BTreeMap<(u32, u32), Vec<Correspondence>> = BTreeMap::new();
    for c in correspondences {
        let la = keypoint_label(&keypoints[c.index_a], labels);
        let lb = keypoint_label(&keypoints[c.index_b], labels);
        if la == lb {
            continue;
        }
        groups.entry((la.min(lb), la.max(lb))).or_default().push(*c);
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.len() >= min_matches)
        .map(|((label_i, label_j), correspondences)| RegionPair {
            label_i,
            label_j,
            correspondences,
            transform: None,
            inliers: 0,
            verified: false,
            dense_mask: None,
        })
        .collect()
}

/// Correspondence endpoints oriented from region `label_i` to `label_j`.
pub fn oriented_points(pair: &RegionPair, keypoints: &[Keypoint], labels: &LabelMap) -> (Vec<Point>, Vec<Point>) {
    let (src, dst) = oriented_keypoints(pair, keypoints, labels);
    (src.iter().map(|k| [k.x, k.y]).collect(), dst.iter().map(|k| [k.x, k.y]).collect())
}

fn oriented_keypoints(pair: &RegionPair, keypoints: &[Keypoint], labels: &LabelMap) -> (Vec<Keypoint>, Vec<Keypoint>) {
    let mut src = Vec::with_capacity(pair.correspondences.len());
    let mut dst = Vec::with_capacity(pair.correspondences.len());
    for c in &pair.correspondences {
        let (a, b) = (keypoints[c.index_a], keypoints[c.index_b]);
        let (s, d) = if keypoint_label(&a, labels) == pair.label_i { (a, b) } else { (b, a) };
        src.push(s);
        dst.push(d);
    }
    (src, dst)
}

/// True when the scale change between `s` and `d` agrees with the local
/// scale of `t` within a factor of `tolerance`.
pub fn scale_consistent(t: &AffineTransform, s: &Keypoint, d: &Keypoint, tolerance: f64) -> bool {
    if !(s.scale > 0.0 && d.scale > 0.0) {
        return true;
    }
    let implied = libm::sqrt(t.det().abs());
    let ratio = d.scale / (s.scale * implied);
    libm::fabs(libm::log(ratio)) <= libm::log(tolerance.max(1.0))
}

/// Runs RANSAC on a proposed pair and records the transform on success.
pub fn estimate_pair_transform(
    pair: &mut RegionPair,
    keypoints: &[Keypoint],
    labels: &LabelMap,
    params: &RansacParams,
    seed: u64,
) -> Result<()> {
    let (ks, kd) = oriented_keypoints(pair, keypoints, labels);
    let src: Vec<Point> = ks.iter().map(|k| [k.x, k.y]).collect();
    let dst: Vec<Point> = kd.iter().map(|k| [k.x, k.y]).collect();
    let fit = ransac_affine_with(&src, &dst, params, seed, |t, i| {
        scale_consistent(t, &ks[i], &kd[i], params.scale_tolerance)
    })?;
    pair.transform = fit.as_ref().map(|f| f.transform);
    pair.inliers = fit.map_or(0, |f| f.inliers.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    /// Half-width of the ZNCC window; the window is `2r+1` pixels square.
    pub window: usize,
    pub zncc_threshold: f64,
    pub max_rounds: usize,
    pub area_ratio: f64,
    /// Sampling step (pixels) of the refit correspondences.
    pub grid: usize,
    /// Refit correspondences search this many pixels around the warp.
    pub search_radius: isize,
    /// Windows with a standard deviation below this are never marked.
    pub min_std: f64,
    /// Pixels displaced less than this by the transform are never marked.
    pub min_shift: f64,
    /// Refits with a larger anisotropy are discarded.
    pub max_anisotropy: f64,
    /// Once verified, marking spreads from the marked pixels to connected
    /// pixels outside the two regions that pass the same test.
    pub grow: bool,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            window: 5,
            zncc_threshold: 0.7,
            max_rounds: 3,
            area_ratio: 0.1,
            grid: 4,
            search_radius: 2,
            min_std: 0.01,
            min_shift: 16.0,
            max_anisotropy: MAX_ANISOTROPY,
            grow: true,
        }
    }
}

/// Outcome of dense verification for one region pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub verified: bool,
    pub transform: AffineTransform,
    /// Marked region pixels: the smaller of the two directions.
    pub marked: usize,
    pub rounds: usize,
    pub dense_mask: TamperMap,
}

/// Zero-normalized cross-correlation between the axis-aligned window at `p`
/// and its image under `t`. `None` when the warped window leaves the image
/// or either window is nearly flat.
fn zncc(img: &GrayImage, t: &AffineTransform, p: (usize, usize), offset: Point, r: isize, min_std: f64) -> Option<f64> {
    let (w, h) = (img.width as isize, img.height as isize);
    let (px, py) = (p.0 as isize, p.1 as isize);
    if px - r < 0 || py - r < 0 || px + r >= w || py + r >= h {
        return None;
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let a = img.at((px + dx) as usize, (py + dy) as usize) as f64;
            let q = t.apply([(px + dx) as f64, (py + dy) as f64]);
            let (qx, qy) = (q[0] + offset[0], q[1] + offset[1]);
            if !img.contains(qx, qy) {
                return None;
            }
            let b = img.sample(qx, qy);
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    let va = saa / n - (sa / n) * (sa / n);
    let vb = sbb / n - (sb / n) * (sb / n);
    if va < min_std * min_std || vb < min_std * min_std {
        return None;
    }
    Some((sab / n - sa / n * sb / n) / libm::sqrt(va * vb))
}

/// Refines an integer ZNCC peak by fitting a parabola along each axis.
fn subpixel_peak(
    img: &GrayImage,
    t: &AffineTransform,
    p: (usize, usize),
    best: (f64, Point),
    r: isize,
    min_std: f64,
) -> Point {
    let mut off = best.1;
    for axis in 0..2 {
        let mut lo = best.1;
        let mut hi = best.1;
        lo[axis] -= 1.0;
        hi[axis] += 1.0;
        let (Some(a), Some(b)) = (zncc(img, t, p, lo, r, min_std), zncc(img, t, p, hi, r, min_std)) else {
            continue;
        };
        let denom = a - 2.0 * best.0 + b;
        if denom < 0.0 {
            off[axis] += (0.5 * (a - b) / denom).clamp(-0.5, 0.5);
        }
    }
    off
}

/// Whether `(x, y)` is marked under `t`: displaced at least `min_shift` and
/// correlated at least `zncc_threshold` with its warp.
fn accepts(img: &GrayImage, t: &AffineTransform, (x, y): (usize, usize), params: &VerifyParams) -> bool {
    let q = t.apply([x as f64, y as f64]);
    if !img.contains(q[0], q[1]) || libm::hypot(q[0] - x as f64, q[1] - y as f64) < params.min_shift {
        return false;
    }
    zncc(img, t, (x, y), [0.0, 0.0], params.window as isize, params.min_std).is_some_and(|z| z >= params.zncc_threshold)
}

/// 8-connected flood from `seeds` through pixels that [`accepts`] marks.
/// Seeds are kept unconditionally.
fn grow_marked(img: &GrayImage, seeds: &[(usize, usize)], t: &AffineTransform, params: &VerifyParams) -> Vec<(usize, usize)> {
    let (w, h) = (img.width, img.height);
    let mut seen = vec![false; w * h];
    let mut out = seeds.to_vec();
    for &(x, y) in seeds {
        seen[y * w + x] = true;
    }
    let mut head = 0;
    while head < out.len() {
        let (x, y) = out[head];
        head += 1;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if core::mem::replace(&mut seen[ny * w + nx], true) {
                    continue;
                }
                if accepts(img, t, (nx, ny), params) {
                    out.push((nx, ny));
                }
            }
        }
    }
    out
}

struct DirectionResult {
    marked: Vec<(usize, usize)>,
    /// Source pixels whose warp landed inside the image.
    inside: usize,
    refit_pairs: Vec<(Point, Point)>,
}

/// Marks pixels of `region` whose window correlates with its warp under `t`,
/// and gathers grid-sampled correspondences refined by a local search.
fn verify_direction(
    img: &GrayImage,
    region: &[u32],
    t: &AffineTransform,
    params: &VerifyParams,
) -> DirectionResult {
    let r = params.window as isize;
    let grid = params.grid.max(1);
    let mut out = DirectionResult { marked: Vec::new(), inside: 0, refit_pairs: Vec::new() };
    for &pix in region {
        let (x, y) = (pix as usize % img.width, pix as usize / img.width);
        let q = t.apply([x as f64, y as f64]);
        if !img.contains(q[0], q[1]) {
            continue;
        }
        out.inside += 1;
        if libm::hypot(q[0] - x as f64, q[1] - y as f64) < params.min_shift {
            continue;
        }
        let Some(score) = zncc(img, t, (x, y), [0.0, 0.0], r, params.min_std) else { continue };
        if score >= params.zncc_threshold {
            out.marked.push((x, y));
            if x % grid == 0 && y % grid == 0 {
                let mut best = (score, [0.0, 0.0]);
                for oy in -params.search_radius..=params.search_radius {
                    for ox in -params.search_radius..=params.search_radius {
                        let off = [ox as f64, oy as f64];
                        if let Some(s) = zncc(img, t, (x, y), off, r, params.min_std) {
                            if s > best.0 {
                                best = (s, off);
                            }
                        }
                    }
                }
                let off = subpixel_peak(img, t, (x, y), best, r, params.min_std);
                out.refit_pairs.push(([x as f64, y as f64], [q[0] + off[0], q[1] + off[1]]));
            }
        }
    }
    out
}

fn stamp(mask: &mut TamperMap, p: Point) {
    let (x, y) = (libm::round(p[0]), libm::round(p[1]));
    if x >= 0.0 && y >= 0.0 && (x as usize) < mask.width && (y as usize) < mask.height {
        mask.set(x as usize, y as usize, true);
    }
}

/// Dense second-stage verification of a region pair.
///
/// Each round warps region `label_i` forward and region `label_j` backward,
/// marks pixels whose ZNCC reaches the threshold, and refits the transform
/// by least squares on grid-sampled marked pixels. The loop stops once the
/// transform moves less than `1e-3` per entry or after `max_rounds`. The
/// pair is verified when the marked count reaches `area_ratio` of the
/// smaller region and at least 10% of either region warps into the image.
pub fn refine_and_verify(
    img: &GrayImage,
    labels: &LabelMap,
    pair: &RegionPair,
    transform: &AffineTransform,
    params: &VerifyParams,
) -> Result<Verification> {
    if (img.width, img.height) != (labels.width, labels.height) {
        return Err(invalid_input!("label map does not cover the image"));
    }
    let regions = labels.region_pixels();
    let (ri, rj) = (&regions[pair.label_i as usize], &regions[pair.label_j as usize]);
    let min_area = ri.len().min(rj.len()) as f64;

    let mut t = *transform;
    let mut rounds = 0;
    let mut last: Option<(DirectionResult, DirectionResult, AffineTransform)> = None;
    while rounds < params.max_rounds.max(1) {
        rounds += 1;
        let Some(inv) = t.inverse() else { break };
        let fwd = verify_direction(img, ri, &t, params);
        let bwd = verify_direction(img, rj, &inv, params);
        let mut src: Vec<Point> = fwd.refit_pairs.iter().map(|p| p.0).collect();
        let mut dst: Vec<Point> = fwd.refit_pairs.iter().map(|p| p.1).collect();
        src.extend(bwd.refit_pairs.iter().map(|p| p.1));
        dst.extend(bwd.refit_pairs.iter().map(|p| p.0));
        let refit = AffineTransform::fit(&src, &dst).filter(|n| n.is_admissible_within(params.max_anisotropy));
        last = Some((fwd, bwd, t));
        match refit {
            Some(n) if n.max_abs_diff(&t) >= 1e-3 => t = n,
            _ => break,
        }
    }

    let mut dense_mask = TamperMap::empty(img.width, img.height);
    let Some((fwd, bwd, used)) = last else {
        return Ok(Verification { verified: false, transform: t, marked: 0, rounds, dense_mask });
    };
    let inv = used.inverse().unwrap_or(used);
    let marked = fwd.marked.len().min(bwd.marked.len());
    let warps_inside = fwd.inside as f64 >= 0.1 * ri.len() as f64 || bwd.inside as f64 >= 0.1 * rj.len() as f64;
    let verified = warps_inside && marked > 0 && marked as f64 >= params.area_ratio * min_area;
    let (fwd_marked, bwd_marked) = if verified && params.grow {
        (grow_marked(img, &fwd.marked, &used, params), grow_marked(img, &bwd.marked, &inv, params))
    } else {
        (fwd.marked, bwd.marked)
    };
    for &(x, y) in &fwd_marked {
        dense_mask.set(x, y, true);
        stamp(&mut dense_mask, used.apply([x as f64, y as f64]));
    }
    for &(x, y) in &bwd_marked {
        dense_mask.set(x, y, true);
        stamp(&mut dense_mask, inv.apply([x as f64, y as f64]));
    }
    Ok(Verification { verified, transform: used, marked, rounds, dense_mask })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapParams {
    pub closing_side: usize,
    pub min_component: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self { closing_side: 5, min_component: 50 }
    }
}

/// Union of the dense masks of verified pairs, closed and cleaned of small
/// components.
pub fn build_tamper_map(width: usize, height: usize, pairs: &[RegionPair], params: &MapParams) -> Result<TamperMap> {
    let mut map = TamperMap::empty(width, height);
    for p in pairs.iter().filter(|p| p.verified) {
        if let Some(m) = &p.dense_mask {
            map.union_with(m)?;
        }
    }
    if map.is_empty() {
        return Ok(map);
    }
    Ok(map.close(params.closing_side).remove_small_components(params.min_component))
}

/// Whole-image mask of the given region labels.
pub fn region_mask(labels: &LabelMap, wanted: &[u32]) -> TamperMap {
    let mut want = vec![false; labels.n_labels];
    for &l in wanted {
        want[l as usize] = true;
    }
    TamperMap { width: labels.width, height: labels.height, mask: labels.labels.iter().map(|&l| want[l as usize]).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::texture;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint { x, y, scale: 1.6, score: 1.0 }
    }

    fn desc(v: &[f32]) -> Descriptor {
        Descriptor { values: v.to_vec(), source_keypoint: None }
    }

    fn quadrants(w: usize, h: usize) -> LabelMap {
        let labels = (0..w * h).map(|i| ((i % w) * 2 / w + 2 * ((i / w) * 2 / h)) as u32).collect();
        LabelMap::new(w, h, labels).unwrap()
    }

    #[test]
    fn single_region_yields_no_matches() {
        let labels = LabelMap::new(64, 64, vec![0; 64 * 64]).unwrap();
        let kps = [kp(5.0, 5.0), kp(50.0, 50.0)];
        let tree = build_index(&[desc(&[0.0, 0.0]), desc(&[0.0, 0.0])]).unwrap();
        assert!(knn_cross_region(&tree, &kps, &labels, &MatchParams::default()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_in_other_region_found_once() {
        let labels = quadrants(100, 100);
        let kps = [kp(10.0, 10.0), kp(80.0, 10.0), kp(10.0, 80.0)];
        let d = [desc(&[1.0, 0.0]), desc(&[1.0, 0.0]), desc(&[0.0, 1.0])];
        let tree = build_index(&d).unwrap();
        let c = knn_cross_region(&tree, &kps, &labels, &MatchParams::default()).unwrap();
        assert_eq!(c[0], Correspondence { index_a: 0, index_b: 1, distance: 0.0 });
        assert!(c.iter().all(|c| c.index_a < c.index_b));
        for c in &c {
            assert_ne!(keypoint_label(&kps[c.index_a], &labels), keypoint_label(&kps[c.index_b], &labels));
        }
    }

    #[test]
    fn spatial_guard_and_distance_cap() {
        let labels = quadrants(100, 100);
        // Adjacent keypoints straddling the region border.
        let kps = [kp(48.0, 10.0), kp(52.0, 10.0), kp(90.0, 90.0)];
        let d = [desc(&[0.0, 0.0]), desc(&[0.0, 0.0]), desc(&[5.0, 0.0])];
        let tree = build_index(&d).unwrap();
        assert!(knn_cross_region(&tree, &kps, &labels, &MatchParams::default()).unwrap().is_empty());
    }

    #[test]
    fn proposals_respect_threshold_and_tally() {
        let labels = quadrants(100, 100);
        let mut kps = Vec::new();
        for i in 0..6 {
            kps.push(kp(5.0 + i as f64, 5.0));
            kps.push(kp(60.0 + i as f64, 5.0));
        }
        let corr: Vec<Correspondence> =
            (0..6).map(|i| Correspondence { index_a: 2 * i, index_b: 2 * i + 1, distance: 0.1 }).collect();
        let pairs = propose_region_pairs(&corr, &kps, &labels, 6);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].label_i, pairs[0].label_j), (0, 1));
        assert!(propose_region_pairs(&corr[..5], &kps, &labels, 6).is_empty());
    }

    fn translated_copy() -> (GrayImage, LabelMap, RegionPair) {
        let mut rgb = texture(128, 96, 11);
        // Copy x∈[2,54) to x∈[66,118); region 1 lies inside the copied band.
        for y in 0..96 {
            for x in 2..54 {
                let p = rgb.pixel(x, y);
                rgb.put(x + 64, y, p);
            }
        }
        let labels = (0..128 * 96)
            .map(|i| {
                let (x, y) = (i % 128, i / 128);
                if !(8..88).contains(&y) {
                    0
                } else if (8..48).contains(&x) {
                    1
                } else if (72..112).contains(&x) {
                    2
                } else {
                    0
                }
            })
            .collect();
        let labels = LabelMap::new(128, 96, labels).unwrap();
        let pair = RegionPair {
            label_i: 1,
            label_j: 2,
            correspondences: Vec::new(),
            transform: None,
            inliers: 0,
            verified: false,
            dense_mask: None,
        };
        (rgb.to_gray(), labels, pair)
    }

    #[test]
    fn exact_translation_is_verified() {
        let (img, labels, pair) = translated_copy();
        let t = AffineTransform::translation(64.3, 0.4);
        let v = refine_and_verify(&img, &labels, &pair, &t, &VerifyParams::default()).unwrap();
        assert!(v.verified);
        for p in [[8.0, 8.0], [47.0, 8.0], [8.0, 87.0], [47.0, 87.0]] {
            let q = v.transform.apply(p);
            assert!(libm::hypot(q[0] - p[0] - 64.0, q[1] - p[1]) < 0.5, "{:?}", v.transform);
        }
        let block = region_mask(&labels, &[1]);
        let covered = block.mask.iter().zip(&v.dense_mask.mask).filter(|(a, b)| **a && **b).count();
        assert!(covered as f64 >= 0.95 * block.count() as f64, "{covered} of {}", block.count());
    }

    #[test]
    fn growth_spreads_past_the_pair_regions() {
        let (img, labels, pair) = translated_copy();
        let t = AffineTransform::translation(64.0, 0.0);
        let grown = refine_and_verify(&img, &labels, &pair, &t, &VerifyParams::default()).unwrap();
        let fixed = VerifyParams { grow: false, ..VerifyParams::default() };
        let kept = refine_and_verify(&img, &labels, &pair, &t, &fixed).unwrap();
        assert!(grown.verified && kept.verified);
        // Rows outside region 1 were copied too.
        let outside = |m: &TamperMap| (2..54).filter(|&x| m.get(x, 6) || m.get(x, 89)).count();
        assert_eq!(outside(&kept.dense_mask), 0);
        assert!(outside(&grown.dense_mask) > 30);
        for (k, g) in kept.dense_mask.mask.iter().zip(&grown.dense_mask.mask) {
            assert!(!*k || *g);
        }
    }

    #[test]
    fn scale_consistency_follows_transform_scale() {
        let t = AffineTransform::similarity_about([0.0, 0.0], 0.3, 1.2);
        let s = Keypoint { x: 0.0, y: 0.0, scale: 2.0, score: 1.0 };
        let d = |scale| Keypoint { scale, ..s };
        assert!(scale_consistent(&t, &s, &d(2.4), 1.5));
        assert!(scale_consistent(&t, &s, &d(3.5), 1.5));
        assert!(!scale_consistent(&t, &s, &d(1.5), 1.5));
        assert!(!scale_consistent(&AffineTransform::IDENTITY, &s, &d(4.0), 1.5));
    }

    #[test]
    fn spurious_transform_is_rejected() {
        let (img, labels, pair) = translated_copy();
        let t = AffineTransform::translation(50.0, 7.0);
        let v = refine_and_verify(&img, &labels, &pair, &t, &VerifyParams::default()).unwrap();
        assert!(!v.verified, "marked {}", v.marked);
    }

    #[test]
    fn warp_outside_image_fails() {
        let (img, labels, pair) = translated_copy();
        let t = AffineTransform::translation(500.0, 0.0);
        assert!(!refine_and_verify(&img, &labels, &pair, &t, &VerifyParams::default()).unwrap().verified);
    }

    #[test]
    fn tamper_map_union_and_cleanup() {
        assert!(build_tamper_map(10, 10, &[], &MapParams::default()).unwrap().is_empty());
        let mut m = TamperMap::empty(40, 40);
        for y in 5..20 {
            for x in 5..20 {
                m.set(x, y, true);
            }
        }
        m.set(35, 35, true);
        let pair = RegionPair {
            label_i: 0,
            label_j: 1,
            correspondences: Vec::new(),
            transform: Some(AffineTransform::IDENTITY),
            inliers: 6,
            verified: true,
            dense_mask: Some(m.clone()),
        };
        let map = build_tamper_map(40, 40, core::slice::from_ref(&pair), &MapParams::default()).unwrap();
        assert!(!map.get(35, 35));
        for y in 5..20 {
            for x in 5..20 {
                assert!(map.get(x, y));
            }
        }
        let unverified = RegionPair { verified: false, ..pair };
        assert!(build_tamper_map(40, 40, &[unverified], &MapParams::default()).unwrap().is_empty());
    }
}
