//! Binary tamper maps and the morphology used to clean them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid_input, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TamperMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` marks a tampered pixel.
    pub mask: Vec<bool>,
}

impl TamperMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, mask: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(invalid_input!("mask has {} pixels, expected {}×{}", mask.len(), width, height));
        }
        Ok(Self { width, height, mask })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn union_with(&mut self, other: &TamperMap) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(invalid_input!("cannot union maps of different sizes"));
        }
        for (a, b) in self.mask.iter_mut().zip(&other.mask) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(x, y));
            }
        }
        out
    }

    /// Square-window max (`dilate`) or min filter. Pixels beyond the border
    /// are unset for the max and set for the min.
    fn filter(&self, side: usize, dilate: bool) -> Self {
        let r = (side / 2) as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        let outside = !dilate;
        let pass = |src: &[bool], horizontal: bool| {
            let mut out = vec![false; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = !dilate;
                    for k in -r..=r {
                        let (xx, yy) = if horizontal { (x + k, y) } else { (x, y + k) };
                        let v = if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            outside
                        } else {
                            src[(yy * w + xx) as usize]
                        };
                        if dilate {
                            acc |= v;
                        } else {
                            acc &= v;
                        }
                    }
                    out[(y * w + x) as usize] = acc;
                }
            }
            out
        };
        let rows = pass(&self.mask, true);
        Self { width: self.width, height: self.height, mask: pass(&rows, false) }
    }

    pub fn dilate(&self, side: usize) -> Self {
        self.filter(side, true)
    }

    /// Pixels beyond the border count as set, so erosion and dilation form
    /// an adjunction and closing is idempotent.
    pub fn erode(&self, side: usize) -> Self {
        self.filter(side, false)
    }

    pub fn close(&self, side: usize) -> Self {
        self.dilate(side).erode(side)
    }

    /// Clears 8-connected components with fewer than `min_size` pixels.
    pub fn remove_small_components(&self, min_size: usize) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = self.clone();
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut comp = Vec::new();
        for start in 0..w * h {
            if !self.mask[start] || seen[start] {
                continue;
            }
            comp.clear();
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                comp.push(p);
                let (x, y) = ((p % w) as isize, (p / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if self.mask[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            if comp.len() < min_size {
                for &p in &comp {
                    out.mask[p] = false;
                }
            }
        }
        out
    }
}
