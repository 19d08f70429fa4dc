#![no_std]
// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Core algorithms for CKN-grad patch description and segmentation-guided
//! copy-move forgery detection.
//!
//! Everything in this crate is a pure function over in-memory rasters and
//! matrices. It builds with `no_std` + `alloc`; file formats, timing and the
//! command line live in the `cmfd` companion crate.
//!
//! # Pipeline
//!
//! - [`segmentation`] – SLIC superpixels (or an imported label map).
//! - [`keypoints`] – zero-threshold DoG detection and the per-region
//!   keypoint distribution strategy.
//! - [`ckn`] – the two-layer CKN-grad descriptor, built on the dense kernels
//!   in [`tensor`].
//! - [`matching`] – cross-region kNN over a k-d tree ([`kdtree`]), region
//!   pair proposal, RANSAC affine fitting, dense ZNCC verification and tamper
//!   map synthesis.
//! - [`pipeline`] – the stages above composed into one detector.
//!
//! [`training`] learns the second CKN layer and the PCA projection, and
//! [`eval`] scores tamper maps and generates synthetic forgeries.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ckn;
mod error;
pub mod eval;
pub mod imaging;
pub mod kdtree;
pub mod keypoints;
pub mod mask;
pub mod matching;
pub mod pipeline;
pub mod ransac;
pub mod segmentation;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub(crate) mod linalg;

pub use ckn::{CknModel, Descriptor};
pub use error::{Error, Result};
pub use imaging::{GradientField, GrayImage, RgbImage};
pub use keypoints::Keypoint;
pub use mask::TamperMap;
pub use segmentation::LabelMap;
pub use tensor::{Matrix, Tensor3};
