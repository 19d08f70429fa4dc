//! Learning the second CKN layer and the PCA projection.
//!
//! Layer 2 is fit by minimizing the squared error between exact Gaussian
//! kernel values on sampled sub-patch pairs and their finite approximation
//! `Σ_j η_j·exp(−‖w_j−x̃‖²/α²)·exp(−‖w_j−x̃′‖²/α²)`, with `η_j = ζ_j²`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::ckn::{layer1_forward, raw_descriptor, CknModel, CknShape};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::imaging::{extract_patch, gradients, GradientField, GrayImage};
use crate::keypoints::{detect_dog, DogParams};
use crate::synthetic::{index, normal};
use crate::tensor::{Matrix, Tensor3};

/// Sampled sub-patch pairs before a bandwidth is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpatchPairs {
    /// `d × n`, unit-norm columns.
    pub x: Matrix,
    /// `d × n`, unit-norm columns.
    pub x_prime: Matrix,
    /// `‖x̃_i − x̃′_i‖`.
    pub distances: Vec<f32>,
    /// Whether pair `i` was drawn as a spatial neighbour pair.
    pub nearby: Vec<bool>,
}

impl SubpatchPairs {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Attaches exact kernel targets `exp(−‖x̃_i−x̃′_i‖²/α²)`.
    pub fn with_alpha(self, alpha: f64) -> SubpatchPairBatch {
        let target =
            self.distances.iter().map(|&d| libm::exp(-(d as f64 * d as f64) / (alpha * alpha)) as f32).collect();
        SubpatchPairBatch { x: self.x, x_prime: self.x_prime, target, alpha }
    }
}

/// Sub-patch pairs with their exact kernel values.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpatchPairBatch {
    pub x: Matrix,
    pub x_prime: Matrix,
    pub target: Vec<f32>,
    pub alpha: f64,
}

impl SubpatchPairBatch {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub pair_count: usize,
    pub n2: usize,
    pub alpha_quantile: f64,
    pub learning_rate: f64,
    /// First-moment decay of the Adam update.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pca_out_dim: usize,
    /// Patches used to fit PCA; 0 uses all of them.
    pub pca_sample_count: usize,
    /// Fraction of pairs held out to monitor the objective.
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    /// Desk-scale profile.
    fn default() -> Self {
        Self {
            pair_count: 20_000,
            n2: 64,
            alpha_quantile: 0.1,
            learning_rate: 0.003,
            momentum: 0.9,
            batch_size: 256,
            epochs: 30,
            seed: 0,
            pca_out_dim: 128,
            pca_sample_count: 0,
            heldout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pair_count == 0 || self.n2 == 0 || self.batch_size == 0 || self.pca_out_dim == 0 {
            return Err(invalid_param!("pair_count, n2, batch_size and pca_out_dim must be positive"));
        }
        if !(self.alpha_quantile > 0.0 && self.alpha_quantile < 1.0) {
            return Err(invalid_param!("alpha_quantile must lie in (0, 1), got {}", self.alpha_quantile));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid_param!("learning_rate must be positive and momentum in [0, 1)"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(invalid_param!("heldout_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

/// Derives independent stream seeds from one user seed.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn subpatch(map: &Tensor3, side: usize, py: usize, px: usize, out: &mut [f32]) -> f64 {
    let mut sq = 0.0f64;
    for c in 0..map.channels {
        for dy in 0..side {
            for dx in 0..side {
                let v = map.get(py + dy, px + dx, c);
                out[(c * side + dy) * side + dx] = v;
                sq += v as f64 * v as f64;
            }
        }
    }
    libm::sqrt(sq)
}

/// Draws `count` sub-patch pairs from a bank of layer-1 maps.
///
/// Even-indexed pairs are spatial neighbours on one map (Chebyshev distance
/// 1 or 2 positions); odd-indexed pairs are independent uniform draws. Zero
/// sub-patches are rejected and redrawn.
pub fn sample_subpatch_pairs(bank: &[Tensor3], count: usize, side: usize, seed: u64) -> Result<SubpatchPairs> {
    if bank.is_empty() {
        return Err(invalid_input!("sub-patch bank is empty"));
    }
    if side == 0 || bank.iter().any(|m| m.height < side || m.width < side) {
        return Err(invalid_param!("sub-patch side {side} does not fit every map"));
    }
    let channels = bank[0].channels;
    if bank.iter().any(|m| m.channels != channels) {
        return Err(invalid_input!("bank maps disagree on channel count"));
    }
    let d = channels * side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(count * d);
    let mut xps = Vec::with_capacity(count * d);
    let mut nearby = Vec::with_capacity(count);
    let mut a = vec![0.0f32; d];
    let mut b = vec![0.0f32; d];
    let max_attempts = 1000 + 100 * count;
    let mut attempts = 0usize;
    while nearby.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(invalid_input!("bank has too few non-zero sub-patches to draw {count} pairs"));
        }
        let near = nearby.len() % 2 == 0;
        let mi = index(&mut rng, bank.len());
        let map = &bank[mi];
        let (ph, pw) = (map.height - side + 1, map.width - side + 1);
        let (py, px) = (index(&mut rng, ph), index(&mut rng, pw));
        let (map2, qy, qx) = if near {
            let dy = index(&mut rng, 5) as isize - 2;
            let dx = index(&mut rng, 5) as isize - 2;
            let (qy, qx) = (py as isize + dy, px as isize + dx);
            if (dy == 0 && dx == 0) || qy < 0 || qx < 0 || qy >= ph as isize || qx >= pw as isize {
                continue;
            }
            (map, qy as usize, qx as usize)
        } else {
            let m2 = &bank[index(&mut rng, bank.len())];
            let (h2, w2) = (m2.height - side + 1, m2.width - side + 1);
            (m2, index(&mut rng, h2), index(&mut rng, w2))
        };
        let na = subpatch(map, side, py, px, &mut a);
        let nb = subpatch(map2, side, qy, qx, &mut b);
        if na <= 1e-9 || nb <= 1e-9 {
            continue;
        }
        xs.extend(a.iter().map(|v| (*v as f64 / na) as f32));
        xps.extend(b.iter().map(|v| (*v as f64 / nb) as f32));
        nearby.push(near);
    }
    let n = count;
    // Collected pair-major; store as d × n.
    let to_dn = |v: &[f32]| {
        let mut m = Matrix::zeros(d, n);
        for i in 0..n {
            for r in 0..d {
                m.data[r * n + i] = v[i * d + r];
            }
        }
        m
    };
    let distances = (0..n)
        .map(|i| {
            let s: f64 = (0..d)
                .map(|r| {
                    let t = xs[i * d + r] as f64 - xps[i * d + r] as f64;
                    t * t
                })
                .sum();
            libm::sqrt(s) as f32
        })
        .collect();
    Ok(SubpatchPairs { x: to_dn(&xs), x_prime: to_dn(&xps), distances, nearby })
}

/// Linear-interpolated quantile of the pair distances, floored at `1e-3`.
pub fn select_alpha(pairs: &SubpatchPairs, quantile: f64) -> f64 {
    let mut d: Vec<f64> = pairs.distances.iter().map(|&v| v as f64).collect();
    if d.is_empty() {
        return 1e-3;
    }
    d.sort_by(f64::total_cmp);
    let pos = quantile.clamp(0.0, 1.0) * (d.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(d.len() - 1);
    let q = d[lo] + (d[hi] - d[lo]) * (pos - lo as f64);
    q.max(1e-3)
}

/// Column-major view of a pair batch: pair `i` occupies one contiguous row.
struct PairRows {
    d: usize,
    x: Vec<f64>,
    xp: Vec<f64>,
    x_sq: Vec<f64>,
    xp_sq: Vec<f64>,
    target: Vec<f64>,
}

impl PairRows {
    fn new(batch: &SubpatchPairBatch) -> Self {
        let (d, n) = (batch.x.rows, batch.x.cols);
        let rows = |m: &Matrix| {
            let mut out = vec![0.0f64; d * n];
            for r in 0..d {
                for i in 0..n {
                    out[i * d + r] = m.data[r * n + i] as f64;
                }
            }
            out
        };
        let (x, xp) = (rows(&batch.x), rows(&batch.x_prime));
        let sq = |v: &[f64]| (0..n).map(|i| v[i * d..(i + 1) * d].iter().map(|a| a * a).sum()).collect();
        Self {
            d,
            x_sq: sq(&x),
            xp_sq: sq(&xp),
            x,
            xp,
            target: batch.target.iter().map(|&t| t as f64).collect(),
        }
    }

    fn len(&self) -> usize {
        self.target.len()
    }
}

/// Layer-2 parameters during optimization, `η = ζ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer2Params {
    pub n2: usize,
    pub d: usize,
    /// `n2 × d`, row-major.
    pub w: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl Layer2Params {
    pub fn eta(&self) -> Vec<f64> {
        self.zeta.iter().map(|z| z * z).collect()
    }

    pub fn w_matrix(&self) -> Matrix {
        Matrix { rows: self.n2, cols: self.d, data: self.w.iter().map(|&v| v as f32).collect() }
    }
}

#[inline]
fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and optionally its gradient with respect to `(w, ζ)` over the listed
/// pairs.
fn loss_and_grad(
    p: &Layer2Params,
    rows: &PairRows,
    idx: &[usize],
    alpha: f64,
    mut grad: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let inv_a2 = 1.0 / (alpha * alpha);
    let d = rows.d;
    let w_sq: Vec<f64> = (0..p.n2).map(|j| dot64(&p.w[j * d..(j + 1) * d], &p.w[j * d..(j + 1) * d])).collect();
    let eta = p.eta();
    let n = idx.len() as f64;
    let mut loss = 0.0;
    let mut ab = vec![0.0f64; p.n2];
    if let Some((gw, gz)) = grad.as_mut() {
        gw.fill(0.0);
        gz.fill(0.0);
    }
    for &i in idx {
        let x = &rows.x[i * d..(i + 1) * d];
        let xp = &rows.xp[i * d..(i + 1) * d];
        let mut pred = 0.0;
        for j in 0..p.n2 {
            let wj = &p.w[j * d..(j + 1) * d];
            let da = w_sq[j] + rows.x_sq[i] - 2.0 * dot64(wj, x);
            let db = w_sq[j] + rows.xp_sq[i] - 2.0 * dot64(wj, xp);
            ab[j] = libm::exp(-(da + db) * inv_a2);
            pred += eta[j] * ab[j];
        }
        let r = rows.target[i] - pred;
        loss += r * r;
        if let Some((gw, gz)) = grad.as_mut() {
            // dL/dpred = −2r/n.
            let g = -2.0 * r / n;
            for j in 0..p.n2 {
                let common = g * ab[j];
                gz[j] += common * 2.0 * p.zeta[j];
                // d(ab)/dw_j = ab·(2/α²)(x + x′ − 2w_j).
                let s = common * eta[j] * 2.0 * inv_a2;
                let wj = &p.w[j * d..(j + 1) * d];
                let gwj = &mut gw[j * d..(j + 1) * d];
                for k in 0..d {
                    gwj[k] += s * (x[k] + xp[k] - 2.0 * wj[k]);
                }
            }
        }
    }
    loss / n
}

/// Mean squared kernel-approximation error over the batch.
pub fn approx_objective(w: &Matrix, eta: &[f64], batch: &SubpatchPairBatch) -> f64 {
    let params = Layer2Params {
        n2: w.rows,
        d: w.cols,
        w: w.data.iter().map(|&v| v as f64).collect(),
        zeta: eta.iter().map(|e| libm::sqrt(e.max(0.0))).collect(),
    };
    let rows = PairRows::new(batch);
    let idx: Vec<usize> = (0..rows.len()).collect();
    loss_and_grad(&params, &rows, &idx, batch.alpha, None)
}

/// Objective and its analytic gradient `(∂L/∂w, ∂L/∂ζ)` at `params`.
pub fn objective_gradient(params: &Layer2Params, batch: &SubpatchPairBatch) -> (f64, Vec<f64>, Vec<f64>) {
    let rows = PairRows::new(batch);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let mut gw = vec![0.0; params.w.len()];
    let mut gz = vec![0.0; params.zeta.len()];
    let loss = loss_and_grad(params, &rows, &idx, batch.alpha, Some((&mut gw, &mut gz)));
    (loss, gw, gz)
}

/// Objective at `params` given in the `ζ` parameterization.
pub fn objective_at(params: &Layer2Params, batch: &SubpatchPairBatch) -> f64 {
    let rows = PairRows::new(batch);
    let idx: Vec<usize> = (0..rows.len()).collect();
    loss_and_grad(params, &rows, &idx, batch.alpha, None)
}

fn shuffle(idx: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = index(rng, i + 1);
        idx.swap(i, j);
    }
}

/// Spherical k-means centroids of the training sub-patches, perturbed with
/// seeded Gaussian noise.
fn init_params(rows: &PairRows, train: &[usize], n2: usize, seed: u64) -> Layer2Params {
    let d = rows.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&[f64]> = Vec::new();
    for &i in train {
        pool.push(&rows.x[i * d..(i + 1) * d]);
        pool.push(&rows.xp[i * d..(i + 1) * d]);
    }
    let take = (n2 * 40).min(pool.len());
    let mut order: Vec<usize> = (0..pool.len()).collect();
    shuffle(&mut order, &mut rng);
    let sample: Vec<&[f64]> = order[..take].iter().map(|&i| pool[i]).collect();

    let mut centroids: Vec<f64> = Vec::with_capacity(n2 * d);
    for j in 0..n2 {
        centroids.extend_from_slice(sample[j % sample.len()]);
    }
    let mut assign = vec![0usize; sample.len()];
    for _ in 0..8 {
        for (s, a) in sample.iter().zip(assign.iter_mut()) {
            *a = (0..n2)
                .max_by(|&p, &q| {
                    dot64(&centroids[p * d..(p + 1) * d], s).total_cmp(&dot64(&centroids[q * d..(q + 1) * d], s))
                })
                .unwrap_or(0);
        }
        let mut sums = vec![0.0f64; n2 * d];
        let mut counts = vec![0usize; n2];
        for (s, &a) in sample.iter().zip(&assign) {
            counts[a] += 1;
            for k in 0..d {
                sums[a * d + k] += s[k];
            }
        }
        for j in 0..n2 {
            let c = &mut sums[j * d..(j + 1) * d];
            let norm = libm::sqrt(c.iter().map(|v| v * v).sum::<f64>());
            if counts[j] > 0 && norm > 0.0 {
                for (dst, v) in centroids[j * d..(j + 1) * d].iter_mut().zip(c.iter()) {
                    *dst = v / norm;
                }
            }
        }
    }
    let noise = 0.01;
    for v in &mut centroids {
        *v += noise * normal(&mut rng);
    }
    Layer2Params { n2, d, w: centroids, zeta: vec![1.0; n2] }
}

const SECOND_MOMENT_DECAY: f64 = 0.999;

#[inline]
fn adam_step(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, config: &TrainConfig, bc1: f64, bc2: f64) {
    *m = config.momentum * *m + (1.0 - config.momentum) * g;
    *v = SECOND_MOMENT_DECAY * *v + (1.0 - SECOND_MOMENT_DECAY) * g * g;
    *p -= config.learning_rate * (*m / bc1) / (libm::sqrt(*v / bc2) + 1e-8);
}

/// Result of layer-2 optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer2Fit {
    /// Raw filters `w_j`, `n2 × d`.
    pub w: Matrix,
    pub eta: Vec<f64>,
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    pub log: Vec<EpochRecord>,
}

/// Minimizes the kernel-approximation objective with mini-batch stochastic
/// gradient descent using Adam steps and seeded shuffling. Filters start at
/// perturbed spherical k-means centroids and every `η_j` at 1.
///
/// The last `heldout_fraction` of the pairs is held out. The returned
/// parameters are those with the lowest held-out loss seen, so the final
/// held-out loss never exceeds the initial one.
pub fn train_layer2(batch: &SubpatchPairBatch, config: &TrainConfig) -> Result<Layer2Fit> {
    config.validate()?;
    let rows = PairRows::new(batch);
    let n = rows.len();
    let held = ((n as f64 * config.heldout_fraction) as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return Err(invalid_input!("need at least 2 pairs to train, got {n}"));
    }
    let train: Vec<usize> = (0..n - held).collect();
    let heldout: Vec<usize> = (n - held..n).collect();

    let mut params = init_params(&rows, &train, config.n2, stream_seed(config.seed, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 2));
    let alpha = batch.alpha;
    let initial = loss_and_grad(&params, &rows, &heldout, alpha, None);
    let mut best = (initial, params.clone());
    let mut log = Vec::with_capacity(config.epochs);

    let (mut m_w, mut v_w) = (vec![0.0; params.w.len()], vec![0.0; params.w.len()]);
    let (mut m_z, mut v_z) = (vec![0.0; params.zeta.len()], vec![0.0; params.zeta.len()]);
    let mut step = 0u64;
    let mut gw = vec![0.0; params.w.len()];
    let mut gz = vec![0.0; params.zeta.len()];
    let mut order = train.clone();
    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let l = loss_and_grad(&params, &rows, chunk, alpha, Some((&mut gw, &mut gz)));
            train_loss += l * chunk.len() as f64;
            step += 1;
            let bc1 = 1.0 - libm::pow(config.momentum, step as f64);
            let bc2 = 1.0 - libm::pow(SECOND_MOMENT_DECAY, step as f64);
            for (((p, m), v), g) in params.w.iter_mut().zip(&mut m_w).zip(&mut v_w).zip(&gw) {
                adam_step(p, m, v, *g, config, bc1, bc2);
            }
            for (((p, m), v), g) in params.zeta.iter_mut().zip(&mut m_z).zip(&mut v_z).zip(&gz) {
                adam_step(p, m, v, *g, config, bc1, bc2);
            }
        }
        train_loss /= train.len() as f64;
        let heldout_loss = loss_and_grad(&params, &rows, &heldout, alpha, None);
        if !train_loss.is_finite() || !heldout_loss.is_finite() || params.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        log.push(EpochRecord { epoch, train_loss, heldout_loss });
        if heldout_loss < best.0 {
            best = (heldout_loss, params.clone());
        }
    }
    let (final_loss, params) = best;
    Ok(Layer2Fit {
        w: params.w_matrix(),
        eta: params.eta(),
        initial_heldout_loss: initial,
        final_heldout_loss: final_loss,
        log,
    })
}

/// Layer-2 parameters in matrix form.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalizedLayer2 {
    /// `2·w_j/α²` per row.
    pub w2: Matrix,
    /// Per-filter `log(η_j)/2 − (1+‖w_j‖²)/α²`.
    pub biases: Vec<f64>,
    /// Mean of `biases`.
    pub b2: f64,
}

/// Converts `(w, η, α)` into the weight matrix and bias of the exponential
/// layer. `η` is clamped at `1e-12`.
pub fn finalize_params(w: &Matrix, eta: &[f64], alpha2: f64) -> Result<FinalizedLayer2> {
    if eta.len() != w.rows {
        return Err(invalid_param!("{} weights for {} filters", eta.len(), w.rows));
    }
    if !(alpha2 > 0.0) {
        return Err(invalid_param!("alpha2 must be positive"));
    }
    let a2 = alpha2 * alpha2;
    let w2 = Matrix { rows: w.rows, cols: w.cols, data: w.data.iter().map(|&v| (2.0 * v as f64 / a2) as f32).collect() };
    let biases: Vec<f64> = (0..w.rows)
        .map(|j| {
            let sq: f64 = w.row(j).iter().map(|&v| v as f64 * v as f64).sum();
            libm::log(eta[j].max(1e-12)) / 2.0 - (1.0 + sq) / a2
        })
        .collect();
    let b2 = biases.iter().sum::<f64>() / biases.len().max(1) as f64;
    Ok(FinalizedLayer2 { w2, biases, b2 })
}

/// Principal directions of the columns of `raw` (`raw_dim × N`).
///
/// Returns the mean and an `out_dim × raw_dim` projection whose rows are
/// orthonormal and ordered by descending variance. Directions beyond the
/// data rank are completed with an orthonormal basis of the complement.
pub fn fit_pca(raw: &Matrix, out_dim: usize) -> Result<(Vec<f32>, Matrix)> {
    let (dim, n) = (raw.rows, raw.cols);
    if out_dim == 0 || out_dim > dim {
        return Err(invalid_param!("PCA output dimension {out_dim} must lie in 1..={dim}"));
    }
    if n < out_dim {
        return Err(invalid_input!("PCA needs at least {out_dim} samples, got {n}"));
    }
    let mean: Vec<f64> = (0..dim).map(|r| raw.row(r).iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(dim, n, |r, c| raw.get(r, c) as f64 - mean[r]);

    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    if n < dim {
        let gram = centered.transpose() * &centered;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        for &k in order.iter().take(out_dim) {
            let lambda = eig.eigenvalues[k];
            if lambda <= top * 1e-12 || lambda <= 0.0 {
                break;
            }
            let u = &centered * eig.eigenvectors.column(k);
            let s = libm::sqrt(lambda);
            dirs.push(u.iter().map(|v| v / s).collect());
        }
    } else {
        let cov = &centered * centered.transpose();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        for &k in order.iter().take(out_dim) {
            if eig.eigenvalues[k] <= top * 1e-12 {
                break;
            }
            dirs.push(eig.eigenvectors.column(k).iter().copied().collect());
        }
    }

    // Re-orthonormalize, then complete with standard basis vectors.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    let push = |mut v: Vec<f64>, basis: &mut Vec<Vec<f64>>| {
        for _ in 0..2 {
            for b in basis.iter() {
                let p = dot64(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        let norm = libm::sqrt(dot64(&v, &v));
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    };
    for d in dirs {
        push(d, &mut basis);
    }
    let mut e = 0;
    while basis.len() < out_dim && e < dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        push(v, &mut basis);
        e += 1;
    }
    let proj = Matrix {
        rows: out_dim,
        cols: dim,
        data: basis.iter().flat_map(|b| b.iter().map(|&v| v as f32)).collect(),
    };
    Ok((mean.iter().map(|&v| v as f32).collect(), proj))
}

/// A trained model together with its optimization log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: CknModel,
    pub alpha2: f64,
    pub layer2: Layer2Fit,
}

/// Trains a complete descriptor from `51×51` gradient patches.
pub fn train_model(patches: &[GradientField], config: &TrainConfig) -> Result<TrainedModel> {
    let (shape, bank) = prepare(patches, config)?;
    let pairs = sample_subpatch_pairs(&bank, config.pair_count, shape.sub2_side, stream_seed(config.seed, 0))?;
    let alpha = select_alpha(&pairs, config.alpha_quantile);
    let batch = pairs.with_alpha(alpha);
    let fit = train_layer2(&batch, config)?;
    let model = assemble_model(patches, shape, &fit.w, &fit.eta, alpha, config)?;
    Ok(TrainedModel { model, alpha2: alpha, layer2: fit })
}

/// A model sharing the training pipeline except that layer 2 holds random
/// unit-norm filters with unit weights; the baseline for judging training.
pub fn random_layer2_model(patches: &[GradientField], config: &TrainConfig, seed: u64) -> Result<CknModel> {
    let (shape, bank) = prepare(patches, config)?;
    let pairs = sample_subpatch_pairs(&bank, config.pair_count, shape.sub2_side, stream_seed(config.seed, 0))?;
    let alpha = select_alpha(&pairs, config.alpha_quantile);
    let d = shape.subpatch_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Matrix::zeros(shape.n2, d);
    for j in 0..shape.n2 {
        let v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        for (k, a) in v.iter().enumerate() {
            w.set(j, k, (a / norm) as f32);
        }
    }
    assemble_model(patches, shape, &w, &vec![1.0; shape.n2], alpha, config)
}

fn prepare(patches: &[GradientField], config: &TrainConfig) -> Result<(CknShape, Vec<Tensor3>)> {
    config.validate()?;
    let shape = CknShape { n2: config.n2, ..CknShape::default() };
    if patches.len() < config.pca_out_dim.max(2) {
        return Err(invalid_input!(
            "training needs at least {} patches, got {}",
            config.pca_out_dim.max(2),
            patches.len()
        ));
    }
    if config.pca_out_dim > shape.raw_dim() {
        return Err(invalid_param!("pca_out_dim {} exceeds raw dimension {}", config.pca_out_dim, shape.raw_dim()));
    }
    let bank = patches.iter().map(|p| layer1_forward(p, &shape)).collect::<Result<Vec<_>>>()?;
    Ok((shape, bank))
}

/// Finalizes layer 2 and fits the PCA projection on raw descriptors.
fn assemble_model(
    patches: &[GradientField],
    shape: CknShape,
    w: &Matrix,
    eta: &[f64],
    alpha: f64,
    config: &TrainConfig,
) -> Result<CknModel> {
    let fin = finalize_params(w, eta, alpha)?;
    let b2 = fin.b2 as f32;
    let take = if config.pca_sample_count == 0 { patches.len() } else { config.pca_sample_count.min(patches.len()) };
    if take < config.pca_out_dim {
        return Err(invalid_input!("PCA sample count {take} is below pca_out_dim {}", config.pca_out_dim));
    }
    let raw_dim = shape.raw_dim();
    let mut raw = Matrix::zeros(raw_dim, take);
    for (c, p) in patches.iter().take(take).enumerate() {
        let v = raw_descriptor(p, &shape, &fin.w2, b2)?;
        for (r, val) in v.into_iter().enumerate() {
            raw.data[r * take + c] = val;
        }
    }
    let (pca_mean, pca_proj) = fit_pca(&raw, config.pca_out_dim)?;
    let model = CknModel { shape, alpha2: alpha as f32, w2: fin.w2, b2, pca_mean, pca_proj };
    model.validate()?;
    Ok(model)
}

/// Crops descriptor patches around the strongest DoG keypoints of an image.
pub fn harvest_patches(img: &GrayImage, dog: &DogParams, max_patches: usize) -> Result<Vec<GradientField>> {
    let mut kps = detect_dog(img, dog)?;
    kps.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)));
    let field = gradients(img)?;
    let window_scale = dog.window_scale();
    let mut out = Vec::new();
    for kp in kps {
        if out.len() >= max_patches {
            break;
        }
        if let Ok(p) = extract_patch(&field, &kp, dog.patch_side, window_scale) {
            out.push(p);
        }
    }
    Ok(out)
}
