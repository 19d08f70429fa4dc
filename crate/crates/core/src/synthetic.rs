//! Seeded procedural textures used as training material and as hosts for
//! synthetic forgeries.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::imaging::RgbImage;

/// Uniform draw in `[0, 1)`.
#[inline]
pub(crate) fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
pub(crate) fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Standard normal draw (Box–Muller).
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit(rng).max(1e-300);
    let u2 = unit(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform index in `0..n`.
#[inline]
pub(crate) fn index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (((rng.next_u64() >> 11) as u128 * n as u128) >> 53) as usize
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with lattice spacing `cell`.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Vec<f64> {
    let gw = (w as f64 / cell) as usize + 2;
    let gh = (h as f64 / cell) as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| unit(rng) * 2.0 - 1.0).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let fy = y as f64 / cell;
        let (iy, ty) = (fy as usize, smoothstep(fy - libm::floor(fy)));
        for x in 0..w {
            let fx = x as f64 / cell;
            let (ix, tx) = (fx as usize, smoothstep(fx - libm::floor(fx)));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * tx;
            let bottom = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * tx;
            out[y * w + x] = top + (bottom - top) * ty;
        }
    }
    out
}

/// A richly structured, non-repeating color texture: layered value noise
/// overlaid with random ellipses and bars, plus light grain.
pub fn texture(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_u64.rotate_left(17));
    let n = width * height;
    let mut img = vec![[0.0f64; 3]; n];
    for ch in 0..3 {
        let base = range(&mut rng, 70.0, 180.0);
        let mut plane = vec![base; n];
        for (cell, amp) in [(48.0, 45.0), (20.0, 30.0), (9.0, 18.0), (4.0, 10.0)] {
            let noise = value_noise(&mut rng, width, height, cell);
            for (p, v) in plane.iter_mut().zip(&noise) {
                *p += amp * v;
            }
        }
        for (px, p) in img.iter_mut().zip(&plane) {
            px[ch] = *p;
        }
    }

    let shapes = 40 + n / 700;
    for _ in 0..shapes {
        let color = [range(&mut rng, 0.0, 255.0), range(&mut rng, 0.0, 255.0), range(&mut rng, 0.0, 255.0)];
        let opacity = range(&mut rng, 0.45, 0.95);
        let cx = range(&mut rng, 0.0, width as f64);
        let cy = range(&mut rng, 0.0, height as f64);
        let angle = range(&mut rng, 0.0, core::f64::consts::PI);
        let (ca, sa) = (libm::cos(angle), libm::sin(angle));
        let bar = unit(&mut rng) < 0.35;
        let (ra, rb) = if bar {
            (range(&mut rng, 6.0, 26.0), range(&mut rng, 1.5, 4.0))
        } else {
            (range(&mut rng, 3.0, 16.0), range(&mut rng, 3.0, 16.0))
        };
        let reach = ra.max(rb) + 1.0;
        let (x0, x1) = ((cx - reach).max(0.0) as usize, ((cx + reach) as usize).min(width - 1));
        let (y0, y1) = ((cy - reach).max(0.0) as usize, ((cy + reach) as usize).min(height - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * ca + dy * sa) / ra;
                let v = (-dx * sa + dy * ca) / rb;
                let inside = if bar { u.abs() <= 1.0 && v.abs() <= 1.0 } else { u * u + v * v <= 1.0 };
                if inside {
                    let px = &mut img[y * width + x];
                    for ch in 0..3 {
                        px[ch] = px[ch] * (1.0 - opacity) + color[ch] * opacity;
                    }
                }
            }
        }
    }

    let mut out = RgbImage::new(width, height);
    for (i, px) in img.iter().enumerate() {
        for ch in 0..3 {
            let grain = range(&mut rng, -4.0, 4.0);
            out.data[3 * i + ch] = libm::round(px[ch] + grain).clamp(0.0, 255.0) as u8;
        }
    }
    out
}
