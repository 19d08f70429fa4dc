//! Scoring of tamper maps, patch-retrieval harnesses and synthetic forgeries.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::error::{invalid_input, invalid_param, Result};
use crate::imaging::{gradients, GradientField, GrayImage, RgbImage};
use crate::kdtree::KdTree;
use crate::mask::TamperMap;
use crate::ransac::AffineTransform;
use crate::synthetic::{index, range};

/// Pixel-level precision, recall and F1 of one tamper map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Precision = |gt ∩ map| / |map|, recall = |gt ∩ map| / |gt|, each 0 when
/// its denominator is 0.
pub fn pixel_metrics(map: &TamperMap, gt: &TamperMap) -> Result<MetricsRow> {
    if (map.width, map.height) != (gt.width, gt.height) {
        return Err(invalid_input!(
            "map is {}×{}, ground truth is {}×{}",
            map.width,
            map.height,
            gt.width,
            gt.height
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&m, &g) in map.mask.iter().zip(&gt.mask) {
        match (m, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MetricsRow { precision, recall, f1: f1(precision, recall), tp, fp, fn_ })
}

/// Detector output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageOutcome {
    pub map: TamperMap,
    /// Whether the image was judged forged.
    pub verdict: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    /// One row per image, in input order.
    pub rows: Vec<MetricsRow>,
    /// Means over forged images.
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    /// Forged images with F1 > 0.5.
    pub f1_above_half: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// Aggregates per-image scores. Forged images count as positives.
pub fn dataset_report(outcomes: &[ImageOutcome], gts: &[TamperMap], original: &[bool]) -> Result<DatasetReport> {
    if outcomes.len() != gts.len() || outcomes.len() != original.len() {
        return Err(invalid_input!(
            "{} outcomes, {} ground truths and {} flags",
            outcomes.len(),
            gts.len(),
            original.len()
        ));
    }
    let rows = outcomes.iter().zip(gts).map(|(o, g)| pixel_metrics(&o.map, g)).collect::<Result<Vec<_>>>()?;
    let forged: Vec<&MetricsRow> = rows.iter().zip(original).filter(|(_, &o)| !o).map(|(r, _)| r).collect();
    let mean = |f: fn(&MetricsRow) -> f64| {
        if forged.is_empty() {
            0.0
        } else {
            forged.iter().map(|r| f(r)).sum::<f64>() / forged.len() as f64
        }
    };
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (o, &orig) in outcomes.iter().zip(original) {
        match (orig, o.verdict) {
            (false, true) => tp += 1,
            (false, false) => fn_ += 1,
            (true, true) => fp += 1,
            (true, false) => tn += 1,
        }
    }
    Ok(DatasetReport {
        mean_precision: mean(|r| r.precision),
        mean_recall: mean(|r| r.recall),
        mean_f1: mean(|r| r.f1),
        f1_above_half: forged.iter().filter(|r| r.f1 > 0.5).count(),
        rows,
        tp,
        fp,
        tn,
        fn_,
        tpr: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
    })
}

/// Leave-one-out nearest-neighbour class accuracy.
pub fn patch_retrieval_eval(descriptors: &[Vec<f32>], classes: &[usize]) -> Result<f64> {
    if descriptors.len() != classes.len() {
        return Err(invalid_input!("{} descriptors for {} labels", descriptors.len(), classes.len()));
    }
    let first = classes.first().copied();
    if first.is_none() || classes.iter().all(|&c| Some(c) == first) {
        return Err(invalid_input!("retrieval accuracy needs at least two classes"));
    }
    let tree = KdTree::build(descriptors)?;
    let hits = (0..descriptors.len())
        .filter(|&q| {
            tree.knn_filtered(&descriptors[q], 1, |i| i != q).first().is_some_and(|n| classes[n.index] == classes[q])
        })
        .count();
    Ok(hits as f64 / descriptors.len() as f64)
}

/// Fraction of queries whose true database entry is among their `k` nearest.
pub fn topk_retrieval_rate(database: &[Vec<f32>], queries: &[Vec<f32>], truth: &[usize], k: usize) -> Result<f64> {
    if queries.len() != truth.len() || queries.is_empty() {
        return Err(invalid_input!("{} queries for {} truth indices", queries.len(), truth.len()));
    }
    let tree = KdTree::build(database)?;
    let hits = queries.iter().zip(truth).filter(|(q, &t)| tree.knn(q, k).iter().any(|n| n.index == t)).count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Gradients of a `side × side` window centred at `center`, resampled
/// through rotation `theta` (radians) and scaling `scale`: output pixel
/// offset `u` reads the image at `center + scale·R(theta)·u`.
pub fn warped_patch(img: &GrayImage, center: [f64; 2], theta: f64, scale: f64, side: usize) -> Result<GradientField> {
    let half = (side as f64 - 1.0) / 2.0;
    let (c, s) = (libm::cos(theta) * scale, libm::sin(theta) * scale);
    let mut pixels = Vec::with_capacity(side * side);
    for v in 0..side {
        for u in 0..side {
            let (du, dv) = (u as f64 - half, v as f64 - half);
            let (x, y) = (center[0] + c * du - s * dv, center[1] + s * du + c * dv);
            if !img.contains(x, y) {
                return Err(crate::Error::OutOfBounds(alloc::format!("warped window leaves the image at ({x:.1}, {y:.1})")));
            }
            pixels.push(img.sample(x, y) as f32);
        }
    }
    gradients(&GrayImage::new(side, side, pixels)?)
}

/// `(degrees, scale)` views forming each class of the transformed-patch
/// retrieval protocol.
pub const RETRIEVAL_VIEWS: [(f64, f64); 4] = [(0.0, 1.0), (30.0, 1.15), (-30.0, 0.87), (15.0, 1.3)];

/// `count` seeded patch centres, assigned to `images` round-robin and kept
/// far enough from the border for any window of `side` pixels rotated and
/// scaled by up to `max_scale`.
pub fn patch_centers(
    images: &[GrayImage],
    count: usize,
    side: usize,
    max_scale: f64,
    seed: u64,
) -> Result<Vec<(usize, [f64; 2])>> {
    if images.is_empty() {
        return Err(invalid_input!("no images to sample patches from"));
    }
    let margin = (side as f64 - 1.0) / 2.0 * max_scale * core::f64::consts::SQRT_2 + 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % images.len();
        let (w, h) = (images[k].width as f64, images[k].height as f64);
        if w - 1.0 < 2.0 * margin || h - 1.0 < 2.0 * margin {
            return Err(invalid_input!("image {k} is {w}×{h}, too small for {side}-pixel patches at scale {max_scale}"));
        }
        out.push((k, [range(&mut rng, margin, w - 1.0 - margin), range(&mut rng, margin, h - 1.0 - margin)]));
    }
    Ok(out)
}

/// One class per centre with one warped patch per view, in centre-major
/// order.
pub fn transformed_patch_classes(
    images: &[GrayImage],
    centers: &[(usize, [f64; 2])],
    views: &[(f64, f64)],
    side: usize,
) -> Result<(Vec<GradientField>, Vec<usize>)> {
    let mut patches = Vec::with_capacity(centers.len() * views.len());
    let mut classes = Vec::with_capacity(centers.len() * views.len());
    for (class, &(k, c)) in centers.iter().enumerate() {
        let img = images.get(k).ok_or_else(|| invalid_input!("centre refers to image {k} of {}", images.len()))?;
        for &(degrees, scale) in views {
            patches.push(warped_patch(img, c, degrees.to_radians(), scale, side)?);
            classes.push(class);
        }
    }
    Ok((patches, classes))
}

/// Axis-aligned block `[x, x+width) × [y, y+height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// How the copied block is placed: shifted by `offset`, then rotated and
/// scaled about the shifted block centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransformSpec {
    Translate { dx: f64, dy: f64 },
    Rotate { dx: f64, dy: f64, degrees: f64 },
    Scale { dx: f64, dy: f64, factor: f64 },
    Combo { dx: f64, dy: f64, degrees: f64, factor: f64 },
}

impl TransformSpec {
    fn parts(&self) -> (f64, f64, f64, f64) {
        match *self {
            TransformSpec::Translate { dx, dy } => (dx, dy, 0.0, 1.0),
            TransformSpec::Rotate { dx, dy, degrees } => (dx, dy, degrees, 1.0),
            TransformSpec::Scale { dx, dy, factor } => (dx, dy, 0.0, factor),
            TransformSpec::Combo { dx, dy, degrees, factor } => (dx, dy, degrees, factor),
        }
    }

    /// The map from source-block coordinates to destination coordinates.
    pub fn transform(&self, block: &Rect) -> AffineTransform {
        let (dx, dy, deg, s) = self.parts();
        let center = [
            block.x as f64 + (block.width as f64 - 1.0) / 2.0 + dx,
            block.y as f64 + (block.height as f64 - 1.0) / 2.0 + dy,
        ];
        let shift = AffineTransform::translation(dx, dy);
        let turn = AffineTransform::similarity_about(center, deg.to_radians(), s);
        compose(&turn, &shift)
    }

    pub fn with_offset(&self, ndx: f64, ndy: f64) -> Self {
        match *self {
            TransformSpec::Translate { .. } => TransformSpec::Translate { dx: ndx, dy: ndy },
            TransformSpec::Rotate { degrees, .. } => TransformSpec::Rotate { dx: ndx, dy: ndy, degrees },
            TransformSpec::Scale { factor, .. } => TransformSpec::Scale { dx: ndx, dy: ndy, factor },
            TransformSpec::Combo { degrees, factor, .. } => TransformSpec::Combo { dx: ndx, dy: ndy, degrees, factor },
        }
    }
}

/// `a ∘ b`.
fn compose(a: &AffineTransform, b: &AffineTransform) -> AffineTransform {
    let (x, y) = (a.m, b.m);
    let mut m = [[0.0; 3]; 2];
    for r in 0..2 {
        m[r][0] = x[r][0] * y[0][0] + x[r][1] * y[1][0];
        m[r][1] = x[r][0] * y[0][1] + x[r][1] * y[1][1];
        m[r][2] = x[r][0] * y[0][2] + x[r][1] * y[1][2] + x[r][2];
    }
    AffineTransform { m }
}

/// Copies `block` through `spec` with bilinear resampling.
///
/// Destination pixels are those whose preimage lies inside the block. The
/// ground truth marks the block and every destination pixel.
pub fn synth_forgery(image: &RgbImage, block: Rect, spec: &TransformSpec) -> Result<(RgbImage, TamperMap)> {
    let (w, h) = (image.width, image.height);
    if block.width == 0 || block.height == 0 || block.x + block.width > w || block.y + block.height > h {
        return Err(invalid_param!("source block {block:?} does not fit a {w}×{h} image"));
    }
    let t = spec.transform(&block);
    let inv = t.inverse().ok_or_else(|| invalid_param!("transform is singular"))?;
    let (x0, y0) = (block.x as f64, block.y as f64);
    let (x1, y1) = ((block.x + block.width - 1) as f64, (block.y + block.height - 1) as f64);
    let corners = [[x0, y0], [x1, y0], [x0, y1], [x1, y1]].map(|p| t.apply(p));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &corners {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > (w - 1) as f64 || hi[1] > (h - 1) as f64 {
        return Err(invalid_param!("destination block leaves the image"));
    }
    let eps = 1e-9;
    let mut out = image.clone();
    let mut gt = TamperMap::empty(w, h);
    for y in block.y..block.y + block.height {
        for x in block.x..block.x + block.width {
            gt.set(x, y, true);
        }
    }
    for qy in libm::floor(lo[1]) as usize..=libm::ceil(hi[1]) as usize {
        for qx in libm::floor(lo[0]) as usize..=libm::ceil(hi[0]) as usize {
            if qx >= w || qy >= h {
                continue;
            }
            let p = inv.apply([qx as f64, qy as f64]);
            if p[0] < x0 - eps || p[1] < y0 - eps || p[0] > x1 + eps || p[1] > y1 + eps {
                continue;
            }
            if gt.get(qx, qy) {
                return Err(invalid_param!("destination overlaps the source block at ({qx}, {qy})"));
            }
            let c = image.sample(p[0].clamp(x0, x1), p[1].clamp(y0, y1));
            out.put(qx, qy, c.map(|v| libm::round(v).clamp(0.0, 255.0) as u8));
            gt.set(qx, qy, true);
        }
    }
    Ok((out, gt))
}

/// Places a square block and a shift at random so that `synth_forgery`
/// succeeds; the source and destination keep `margin` pixels from the
/// border.
pub fn random_forgery(
    image: &RgbImage,
    side: usize,
    spec: &TransformSpec,
    margin: usize,
    seed: u64,
) -> Result<(RgbImage, TamperMap, Rect, TransformSpec)> {
    let (w, h) = (image.width, image.height);
    if side + 2 * margin > w || side + 2 * margin > h {
        return Err(invalid_param!("block of side {side} with margin {margin} does not fit {w}×{h}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let block = Rect {
            x: margin + index(&mut rng, w - side - 2 * margin + 1),
            y: margin + index(&mut rng, h - side - 2 * margin + 1),
            width: side,
            height: side,
        };
        let dx = libm::round(range(&mut rng, -(w as f64), w as f64));
        let dy = libm::round(range(&mut rng, -(h as f64), h as f64));
        let placed = spec.with_offset(dx, dy);
        let t = placed.transform(&block);
        let reach = side as f64 * 0.75;
        let c = t.apply([block.x as f64 + side as f64 / 2.0, block.y as f64 + side as f64 / 2.0]);
        let m = margin as f64;
        if c[0] - reach < m || c[1] - reach < m || c[0] + reach > (w as f64 - m) || c[1] + reach > (h as f64 - m) {
            continue;
        }
        // Require a clear gap so the copy never touches its source.
        if libm::fabs(dx) < side as f64 * 1.25 && libm::fabs(dy) < side as f64 * 1.25 {
            continue;
        }
        if let Ok((img, gt)) = synth_forgery(image, block, &placed) {
            return Ok((img, gt, block, placed));
        }
    }
    Err(invalid_param!("no valid placement for a {side}px block"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{texture, unit};
    use alloc::vec;
    use proptest::prelude::*;

    fn rect_map(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> TamperMap {
        let mut m = TamperMap::empty(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn metric_hand_cases() {
        let gt = rect_map(20, 20, 0, 10, 0, 10);
        let perfect = pixel_metrics(&gt, &gt).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let empty = pixel_metrics(&TamperMap::empty(20, 20), &gt).unwrap();
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        let half = pixel_metrics(&rect_map(20, 20, 5, 15, 0, 10), &gt).unwrap();
        assert_eq!((half.precision, half.recall, half.f1), (0.5, 0.5, 0.5));
        assert_eq!((half.tp, half.fp, half.fn_), (50, 50, 50));
        assert!(pixel_metrics(&TamperMap::empty(3, 3), &gt).is_err());
    }

    #[test]
    fn confusion_four_images() {
        let gt = rect_map(10, 10, 0, 5, 0, 5);
        let none = TamperMap::empty(10, 10);
        let outcomes = vec![
            ImageOutcome { map: gt.clone(), verdict: true },
            ImageOutcome { map: none.clone(), verdict: false },
            ImageOutcome { map: gt.clone(), verdict: true },
            ImageOutcome { map: none.clone(), verdict: false },
        ];
        let gts = vec![gt.clone(), gt.clone(), none.clone(), none.clone()];
        let r = dataset_report(&outcomes, &gts, &[false, false, true, true]).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp, r.tn), (1, 1, 1, 1));
        assert_eq!((r.tpr, r.fpr), (0.5, 0.5));
        assert_eq!(r.mean_f1, 0.5);
        assert_eq!(r.f1_above_half, 1);
        assert!(dataset_report(&outcomes, &gts[..3], &[false; 4]).is_err());
    }

    #[test]
    fn retrieval_duplicates_and_single_class() {
        let d: Vec<Vec<f32>> = (0..10).map(|i| vec![(i / 2) as f32, 0.0]).collect();
        let c: Vec<usize> = (0..10).map(|i| i / 2).collect();
        assert_eq!(patch_retrieval_eval(&d, &c).unwrap(), 1.0);
        assert!(patch_retrieval_eval(&d, &[0; 10]).is_err());
    }

    #[test]
    fn random_descriptors_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<Vec<f32>> = (0..1000).map(|_| (0..16).map(|_| unit(&mut rng) as f32).collect()).collect();
        let c: Vec<usize> = (0..1000).map(|i| i % 4).collect();
        let acc = patch_retrieval_eval(&d, &c).unwrap();
        assert!((acc - 0.25).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn translation_copies_exactly() {
        let img = texture(128, 128, 2);
        let block = Rect { x: 10, y: 12, width: 30, height: 30 };
        let (f, gt) = synth_forgery(&img, block, &TransformSpec::Translate { dx: 60.0, dy: 50.0 }).unwrap();
        for y in 12..42 {
            for x in 10..40 {
                assert_eq!(f.pixel(x + 60, y + 50), img.pixel(x, y));
            }
        }
        assert_eq!(gt.count(), 1800);
        let (r, _) = synth_forgery(&img, block, &TransformSpec::Rotate { dx: 60.0, dy: 50.0, degrees: 0.0 }).unwrap();
        assert_eq!(r, f);
    }

    #[test]
    fn overlap_and_bounds_rejected() {
        let img = texture(64, 64, 1);
        let block = Rect { x: 10, y: 10, width: 20, height: 20 };
        assert!(synth_forgery(&img, block, &TransformSpec::Translate { dx: 5.0, dy: 0.0 }).is_err());
        assert!(synth_forgery(&img, block, &TransformSpec::Translate { dx: 50.0, dy: 0.0 }).is_err());
    }

    #[test]
    fn rotated_gt_counts_both_parts() {
        let img = texture(160, 160, 4);
        let block = Rect { x: 10, y: 10, width: 40, height: 40 };
        let spec = TransformSpec::Combo { dx: 90.0, dy: 80.0, degrees: 15.0, factor: 1.2 };
        let (f, gt) = synth_forgery(&img, block, &spec).unwrap();
        let changed = (0..160 * 160).filter(|&i| gt.mask[i] && !(10..50).contains(&(i % 160))).count();
        assert_eq!(gt.count(), 1600 + changed);
        // Destination area is about factor² times the source area.
        assert!((changed as f64 / 1600.0 - 1.44).abs() < 0.1);
        assert_ne!(f, img);
        let (g, _, _, _) = random_forgery(&img, 40, &spec, 10, 3).unwrap();
        assert_eq!(g, random_forgery(&img, 40, &spec, 10, 3).unwrap().0);
    }

    #[test]
    fn warped_patch_identity_matches_crop() {
        let img = texture(80, 80, 5).to_gray();
        let p = warped_patch(&img, [40.0, 40.0], 0.0, 1.0, 21).unwrap();
        let crop: Vec<f32> = (30..51).flat_map(|y| (30..51).map(move |x| (x, y))).map(|(x, y)| img.at(x, y)).collect();
        let g = gradients(&GrayImage::new(21, 21, crop).unwrap()).unwrap();
        assert_eq!(p, g);
        assert!(warped_patch(&img, [5.0, 40.0], 0.0, 1.0, 21).is_err());
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_transpose_symmetric(w in 1usize..12, h in 1usize..12, a in any::<u64>(), b in any::<u64>()) {
            let gen = |mut s: u64| {
                let mut m = TamperMap::empty(w, h);
                for v in m.mask.iter_mut() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    *v = (s >> 33) % 2 == 0;
                }
                m
            };
            let (m, g) = (gen(a), gen(b));
            let r = pixel_metrics(&m, &g).unwrap();
            for v in [r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let lo = r.precision.min(r.recall);
            prop_assert!(r.f1 >= lo - 1e-12);
            let t = pixel_metrics(&m.transposed(), &g.transposed()).unwrap();
            prop_assert_eq!(r, t);
        }

        #[test]
        fn dataset_means_match_rows(n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut outcomes = Vec::new();
            let mut gts = Vec::new();
            for _ in 0..n {
                let x = index(&mut rng, 8);
                outcomes.push(ImageOutcome { map: rect_map(8, 8, x, 8, 0, 4), verdict: true });
                gts.push(rect_map(8, 8, 0, 1 + index(&mut rng, 7), 0, 8));
            }
            let r = dataset_report(&outcomes, &gts, &vec![false; n]).unwrap();
            let mean = r.rows.iter().map(|x| x.f1).sum::<f64>() / n as f64;
            prop_assert!((r.mean_f1 - mean).abs() < 1e-12);
        }
    }
}
