//! The complete detector: segmentation, keypoints, descriptors, two-stage
//! matching and tamper-map synthesis.

use alloc::vec::Vec;
use core::fmt;

use crate::ckn::{describe, CknModel, Descriptor};
use crate::error::{invalid_input, Error, Result};
use crate::imaging::{extract_patch, gradients, RgbImage};
use crate::keypoints::{detect_dog, distribute_keypoints, DogParams, Keypoint};
use crate::mask::TamperMap;
use crate::matching::{
    build_index, build_tamper_map, estimate_pair_transform, knn_cross_region, propose_region_pairs,
    refine_and_verify, MapParams, MatchParams, RegionPair, VerifyParams,
};
use crate::ransac::RansacParams;
use crate::segmentation::{slic, LabelMap, SlicParams};
use crate::training::stream_seed;

/// Runs independent jobs `0..len` and returns their results in index order.
pub trait Executor {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, len: usize, f: F) -> Vec<T>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, len: usize, f: F) -> Vec<T> {
        (0..len).map(f).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Segmentation,
    Keypoints,
    Distribution,
    Description,
    Matching,
    Ransac,
    Verification,
    TamperMap,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Segmentation,
        Stage::Keypoints,
        Stage::Distribution,
        Stage::Description,
        Stage::Matching,
        Stage::Ransac,
        Stage::Verification,
        Stage::TamperMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Segmentation => "segmentation",
            Stage::Keypoints => "keypoints",
            Stage::Distribution => "distribution",
            Stage::Description => "description",
            Stage::Matching => "matching",
            Stage::Ransac => "ransac",
            Stage::Verification => "verification",
            Stage::TamperMap => "tamper_map",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Notified as each stage begins and ends; used for timing.
pub trait StageObserver {
    fn begin(&mut self, _stage: Stage) {}
    fn end(&mut self, _stage: Stage) {}
}

impl StageObserver for () {}

/// A pipeline failure attributed to the stage that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct DetectError {
    pub stage: Stage,
    pub error: Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectConfig {
    /// `None` uses the image-size default.
    pub region_count: Option<usize>,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub dog: DogParams,
    pub lambda: f64,
    pub matching: MatchParams,
    pub ransac: RansacParams,
    pub verify: VerifyParams,
    pub map: MapParams,
    pub seed: u64,
}

/// RANSAC trials per region pair in the detector. True matches between
/// two superpixels are often a small fraction of the pair's correspondences.
pub const DETECT_RANSAC_ITERATIONS: usize = 30_000;

/// Verification refit rounds in the detector; a rough RANSAC transform
/// needs several rounds to converge.
pub const DETECT_VERIFY_ROUNDS: usize = 8;

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            region_count: None,
            compactness: 10.0,
            slic_iterations: 10,
            dog: DogParams::default(),
            lambda: 0.5,
            matching: MatchParams::default(),
            ransac: RansacParams { iterations: DETECT_RANSAC_ITERATIONS, ..RansacParams::default() },
            verify: VerifyParams { max_rounds: DETECT_VERIFY_ROUNDS, ..VerifyParams::default() },
            map: MapParams::default(),
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn slic_params(&self, width: usize, height: usize) -> SlicParams {
        let mut p = SlicParams::for_image(width, height);
        if let Some(k) = self.region_count {
            p.region_count = k;
        }
        p.compactness = self.compactness;
        p.iterations = self.slic_iterations;
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub tamper_map: TamperMap,
    pub labels: LabelMap,
    /// Every proposed pair, verified or not.
    pub pairs: Vec<RegionPair>,
    pub detected_keypoints: usize,
    pub distributed_keypoints: usize,
    pub descriptors: usize,
    pub correspondences: usize,
}

impl Detection {
    pub fn verified_pairs(&self) -> impl Iterator<Item = &RegionPair> {
        self.pairs.iter().filter(|p| p.verified)
    }

    /// An image is judged forged iff at least one pair is verified.
    pub fn is_forged(&self) -> bool {
        self.pairs.iter().any(|p| p.verified)
    }
}

fn at<T>(stage: Stage, r: Result<T>) -> core::result::Result<T, DetectError> {
    r.map_err(|error| DetectError { stage, error })
}

/// Keypoints and descriptors of an image, aligned index by index.
pub fn describe_keypoints<E: Executor>(
    image: &crate::imaging::GrayImage,
    keypoints: &[Keypoint],
    model: &CknModel,
    dog: &DogParams,
    exec: &E,
) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let field = gradients(image)?;
    let window_scale = dog.window_scale();
    let side = model.shape.patch_side;
    let results = exec.map(keypoints.len(), |i| -> Result<Option<Descriptor>> {
        match extract_patch(&field, &keypoints[i], side, window_scale) {
            Ok(patch) => {
                let mut d = describe(&patch, model)?;
                d.source_keypoint = Some(i);
                Ok(Some(d))
            }
            Err(Error::OutOfBounds(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut kps = Vec::with_capacity(keypoints.len());
    let mut descs = Vec::with_capacity(keypoints.len());
    for (kp, r) in keypoints.iter().zip(results) {
        if let Some(d) = r? {
            kps.push(*kp);
            descs.push(d);
        }
    }
    Ok((kps, descs))
}

/// Runs the full detector on one image.
///
/// `labels` replaces SLIC when given. The result depends only on the inputs
/// and `config.seed`, not on how `exec` schedules jobs.
pub fn detect<E: Executor, O: StageObserver>(
    image: &RgbImage,
    labels: Option<LabelMap>,
    model: &CknModel,
    config: &DetectConfig,
    exec: &E,
    observer: &mut O,
) -> core::result::Result<Detection, DetectError> {
    let (w, h) = (image.width, image.height);

    observer.begin(Stage::Segmentation);
    let labels = match labels {
        Some(l) if (l.width, l.height) != (w, h) => {
            return Err(DetectError {
                stage: Stage::Segmentation,
                error: invalid_input!("label map is {}×{}, image is {w}×{h}", l.width, l.height),
            })
        }
        Some(l) => l,
        None => at(Stage::Segmentation, slic(image, &config.slic_params(w, h)))?,
    };
    observer.end(Stage::Segmentation);

    let gray = image.to_gray();
    observer.begin(Stage::Keypoints);
    let mut dog = config.dog.clone();
    dog.patch_side = model.shape.patch_side;
    let detected = at(Stage::Keypoints, detect_dog(&gray, &dog))?;
    observer.end(Stage::Keypoints);

    observer.begin(Stage::Distribution);
    let distributed = distribute_keypoints(&detected, &labels, config.lambda);
    observer.end(Stage::Distribution);

    observer.begin(Stage::Description);
    let (kps, descs) = at(Stage::Description, describe_keypoints(&gray, &distributed, model, &dog, exec))?;
    observer.end(Stage::Description);

    observer.begin(Stage::Matching);
    let (correspondences, mut pairs) = if descs.is_empty() {
        (0, Vec::new())
    } else {
        let index = at(Stage::Matching, build_index(&descs))?;
        let corr = at(Stage::Matching, knn_cross_region(&index, &kps, &labels, &config.matching))?;
        (corr.len(), propose_region_pairs(&corr, &kps, &labels, config.matching.min_matches))
    };
    observer.end(Stage::Matching);

    observer.begin(Stage::Ransac);
    let fitted = exec.map(pairs.len(), |i| {
        let mut p = pairs[i].clone();
        let seed = stream_seed(config.seed, ((p.label_i as u64) << 32) | p.label_j as u64);
        estimate_pair_transform(&mut p, &kps, &labels, &config.ransac, seed).map(|_| p)
    });
    pairs = at(Stage::Ransac, fitted.into_iter().collect())?;
    observer.end(Stage::Ransac);

    observer.begin(Stage::Verification);
    let checked = exec.map(pairs.len(), |i| -> Result<RegionPair> {
        let mut p = pairs[i].clone();
        if let Some(t) = p.transform {
            let v = refine_and_verify(&gray, &labels, &p, &t, &config.verify)?;
            p.verified = v.verified;
            p.transform = Some(v.transform);
            p.dense_mask = v.verified.then_some(v.dense_mask);
        }
        Ok(p)
    });
    pairs = at(Stage::Verification, checked.into_iter().collect())?;
    observer.end(Stage::Verification);

    observer.begin(Stage::TamperMap);
    let tamper_map = at(Stage::TamperMap, build_tamper_map(w, h, &pairs, &config.map))?;
    observer.end(Stage::TamperMap);

    Ok(Detection {
        tamper_map,
        labels,
        pairs,
        detected_keypoints: detected.len(),
        distributed_keypoints: distributed.len(),
        descriptors: descs.len(),
        correspondences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckn::CknShape;
    use crate::tensor::Matrix;
    use alloc::vec;

    /// A tiny untrained model; enough to exercise the plumbing.
    pub(crate) fn toy_model() -> CknModel {
        let shape = CknShape { n2: 4, ..CknShape::desk() };
        let d = shape.subpatch_dim();
        let mut w2 = Matrix::zeros(4, d);
        for j in 0..4 {
            for k in 0..d {
                w2.set(j, k, if (k + j) % 4 == 0 { 0.5 } else { -0.1 });
            }
        }
        let raw = shape.raw_dim();
        let mut proj = Matrix::zeros(8, raw);
        for r in 0..8 {
            proj.set(r, r * 7, 1.0);
        }
        CknModel { shape, alpha2: 0.7, w2, b2: -2.0, pca_mean: vec![0.0; raw], pca_proj: proj }
    }

    #[test]
    fn uniform_image_yields_empty_map() {
        let img = RgbImage::from_vec(96, 96, vec![128; 96 * 96 * 3]).unwrap();
        let d = detect(&img, None, &toy_model(), &DetectConfig::default(), &Sequential, &mut ()).unwrap();
        assert!(d.tamper_map.is_empty());
        assert!(!d.is_forged());
        assert_eq!(d.detected_keypoints, 0);
    }

    #[test]
    fn mismatched_labels_attributed_to_segmentation() {
        let img = RgbImage::from_vec(64, 64, vec![0; 64 * 64 * 3]).unwrap();
        let labels = LabelMap::new(32, 32, vec![0; 32 * 32]).unwrap();
        let e = detect(&img, Some(labels), &toy_model(), &DetectConfig::default(), &Sequential, &mut ()).unwrap_err();
        assert_eq!(e.stage, Stage::Segmentation);
    }

    #[test]
    fn observer_sees_every_stage_in_order() {
        struct Log(Vec<(Stage, bool)>);
        impl StageObserver for Log {
            fn begin(&mut self, s: Stage) {
                self.0.push((s, true));
            }
            fn end(&mut self, s: Stage) {
                self.0.push((s, false));
            }
        }
        let img = crate::synthetic::texture(96, 96, 1);
        let mut log = Log(Vec::new());
        detect(&img, None, &toy_model(), &DetectConfig::default(), &Sequential, &mut log).unwrap();
        let expected: Vec<(Stage, bool)> = Stage::ALL.iter().flat_map(|&s| [(s, true), (s, false)]).collect();
        assert_eq!(log.0, expected);
    }
}
