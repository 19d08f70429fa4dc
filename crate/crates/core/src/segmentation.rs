//! Superpixel label maps: SLIC oversegmentation, connectivity enforcement and
//! validation of imported partitions.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{invalid_input, invalid_param, Result};
use crate::imaging::RgbImage;

/// A partition of the image into `n_labels` regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub n_labels: usize,
}

impl LabelMap {
    /// Validates a dense labeling: every value in `0..n_labels` must occur.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(invalid_input!("label buffer of {} does not match {width}x{height}", labels.len()));
        }
        let n_labels = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut seen = vec![false; n_labels];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid_input!("label {missing} does not occur; labels must be dense"));
        }
        Ok(Self { width, height, labels, n_labels })
    }

    /// Relabels arbitrary values densely from 0, preserving their order.
    pub fn densify(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height || raw.is_empty() {
            return Err(invalid_input!("label buffer of {} does not match {width}x{height}", raw.len()));
        }
        let distinct: BTreeSet<u32> = raw.iter().copied().collect();
        let remap: BTreeMap<u32, u32> = distinct.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        let labels = raw.iter().map(|v| remap[v]).collect();
        Ok(Self { width, height, labels, n_labels: remap.len() })
    }

    #[inline]
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per label.
    pub fn areas(&self) -> Vec<usize> {
        let mut a = vec![0usize; self.n_labels];
        for &l in &self.labels {
            a[l as usize] += 1;
        }
        a
    }

    /// Linear pixel indices per label, ascending.
    pub fn region_pixels(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_labels];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i as u32);
        }
        out
    }

    /// Whether every label's pixel set is a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let comps = components(&self.labels, self.width, self.height);
        comps.count == self.n_labels
    }
}

/// Default superpixel count: one region per 5000 pixels, clamped to
/// `[16, 1024]`.
pub fn default_region_count(width: usize, height: usize) -> usize {
    let n = libm::round((width * height) as f64 / 5000.0) as usize;
    n.clamp(16, 1024)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlicParams {
    pub region_count: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicParams {
    pub fn for_image(width: usize, height: usize) -> Self {
        Self { region_count: default_region_count(width, height), compactness: 10.0, iterations: 10 }
    }
}

fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        libm::pow((v + 0.055) / 1.055, 2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > 216.0 / 24389.0 {
        libm::cbrt(t)
    } else {
        (24389.0 / 27.0 * t + 16.0) / 116.0
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(p: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (srgb_to_linear(p[0]), srgb_to_linear(p[1]), srgb_to_linear(p[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn lab_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2])
}

/// SLIC superpixels: grid seeds moved to the lowest-gradient pixel of their
/// 3×3 neighbourhood, local k-means in joint CIELAB + position space with
/// compactness weighting, then connectivity enforcement.
pub fn slic(image: &RgbImage, params: &SlicParams) -> Result<LabelMap> {
    let (w, h) = (image.width, image.height);
    let n = w * h;
    if params.region_count < 2 {
        return Err(invalid_param!("SLIC needs at least 2 regions, got {}", params.region_count));
    }
    if params.region_count > n {
        return Err(invalid_param!("{} regions exceed the {n} pixels of the image", params.region_count));
    }
    if !(params.compactness > 0.0) {
        return Err(invalid_param!("compactness must be positive"));
    }
    let lab: Vec<[f64; 3]> = image.data.chunks_exact(3).map(|p| rgb_to_lab([p[0], p[1], p[2]])).collect();

    let k = params.region_count;
    let nx = (libm::round(libm::sqrt(k as f64 * w as f64 / h as f64)) as usize).clamp(1, w);
    let ny = (libm::round(k as f64 / nx as f64) as usize).clamp(1, h);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;
    let spacing = libm::sqrt(n as f64 / (nx * ny) as f64);

    let grad = |x: usize, y: usize| -> f64 {
        let l = |xx: usize, yy: usize| &lab[yy * w + xx];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        lab_dist2(l(xr, y), l(xl, y)) + lab_dist2(l(x, yd), l(x, yu))
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * step_x) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * step_y) as usize).min(h - 1);
            let (mut bx, mut by, mut best) = (cx, cy, grad(cx, cy));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (x, y) = (cx as isize + dx, cy as isize + dy);
                    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                        continue;
                    }
                    let g = grad(x as usize, y as usize);
                    if g < best {
                        best = g;
                        bx = x as usize;
                        by = y as usize;
                    }
                }
            }
            centers.push(Center { lab: lab[by * w + bx], x: bx as f64, y: by as f64 });
        }
    }

    let radius = libm::ceil(step_x.max(step_y)) as isize;
    let spatial_weight = (params.compactness / spacing) * (params.compactness / spacing);
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.iterations.max(1) {
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (libm::round(c.x) as isize, libm::round(c.y) as isize);
            let (x0, x1) = ((cx - radius).max(0) as usize, ((cx + radius).min(w as isize - 1)) as usize);
            let (y0, y1) = ((cy - radius).max(0) as usize, ((cy + radius).min(h as isize - 1)) as usize);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let ds = (x as f64 - c.x) * (x as f64 - c.x) + (y as f64 - c.y) * (y as f64 - c.y);
                    let d = lab_dist2(&lab[i], &c.lab) + ds * spatial_weight;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        // Pixels no window reached fall back to the nearest center in space.
        for i in 0..n {
            if dist[i].is_infinite() {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let nearest = centers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        let da = (a.1.x - x) * (a.1.x - x) + (a.1.y - y) * (a.1.y - y);
                        let db = (b.1.x - x) * (b.1.x - x) + (b.1.y - y) * (b.1.y - y);
                        da.total_cmp(&db)
                    })
                    .map(|(ci, _)| ci)
                    .unwrap_or(0);
                labels[i] = nearest as u32;
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                *c = Center { lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]], x: s[3] / s[5], y: s[4] / s[5] };
            }
        }
    }
    Ok(enforce_connectivity(&labels, w, h, k))
}

struct Components {
    /// Component id per pixel.
    ids: Vec<u32>,
    count: usize,
}

/// 4-connected components of equal-label pixels, numbered in scan order.
fn components(labels: &[u32], w: usize, h: usize) -> Components {
    let mut ids = vec![u32::MAX; labels.len()];
    let mut count = 0usize;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if ids[start] != u32::MAX {
            continue;
        }
        let l = labels[start];
        ids[start] = count as u32;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if ids[j] == u32::MAX && labels[j] == l {
                    ids[j] = count as u32;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        count += 1;
    }
    Components { ids, count }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Splits every label into its 4-connected components, merges components
/// smaller than a quarter of the mean target area (`pixels / expected_regions`)
/// into their largest adjacent component, and relabels densely in scan order.
pub fn enforce_connectivity(labels: &[u32], width: usize, height: usize, expected_regions: usize) -> LabelMap {
    let comps = components(labels, width, height);
    let min_size = (width * height) / expected_regions.max(1) / 4;
    let mut size = vec![0usize; comps.count];
    for &c in &comps.ids {
        size[c as usize] += 1;
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps.count];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let a = comps.ids[i] as usize;
            if x + 1 < width {
                let b = comps.ids[i + 1] as usize;
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            if y + 1 < height {
                let b = comps.ids[i + width] as usize;
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..comps.count).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..comps.count).filter(|&c| size[c] < min_size).map(|c| Reverse((size[c], c))).collect();
    while let Some(Reverse((s, c))) = heap.pop() {
        if find(&mut parent, c) != c || size[c] != s || s >= min_size {
            continue;
        }
        let neighbours: BTreeSet<usize> = adj[c].iter().map(|&n| find(&mut parent, n)).filter(|&n| n != c).collect();
        let Some(&target) = neighbours.iter().max_by(|&&a, &&b| size[a].cmp(&size[b]).then(b.cmp(&a))) else {
            continue;
        };
        parent[c] = target;
        size[target] += size[c];
        let moved = core::mem::take(&mut adj[c]);
        adj[target].extend(moved);
        adj[target].remove(&target);
        adj[target].remove(&c);
        if size[target] < min_size {
            heap.push(Reverse((size[target], target)));
        }
    }

    let mut dense = vec![u32::MAX; comps.count];
    let mut next = 0u32;
    let mut out = Vec::with_capacity(labels.len());
    for &c in &comps.ids {
        let root = find(&mut parent, c as usize);
        if dense[root] == u32::MAX {
            dense[root] = next;
            next += 1;
        }
        out.push(dense[root]);
    }
    LabelMap { width, height, labels: out, n_labels: next as usize }
}
