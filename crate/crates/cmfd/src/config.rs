//! Flat `key = value` configuration files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. A file may mix detection and training keys; each command applies
//! the keys it knows, and keys nobody knows are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use cmfd_core::pipeline::DetectConfig;
use cmfd_core::training::TrainConfig;

use crate::error::{io_err, Error, Result};

pub const DETECT_KEYS: &[&str] = &[
    "seed",
    "regions",
    "compactness",
    "slic_iterations",
    "lambda",
    "contrast_threshold",
    "octaves",
    "scales_per_octave",
    "first_octave",
    "edge_ratio",
    "sigma0",
    "input_blur",
    "patch_extent",
    "knn",
    "max_distance",
    "min_spatial",
    "min_matches",
    "ransac_iters",
    "inlier_tol",
    "min_inliers",
    "max_anisotropy",
    "scale_tolerance",
    "zncc",
    "window",
    "max_rounds",
    "area_ratio",
    "grid",
    "search_radius",
    "min_std",
    "min_shift",
    "grow",
    "closing_side",
    "min_component",
];

pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "pair_count",
    "n2",
    "alpha_quantile",
    "learning_rate",
    "momentum",
    "batch_size",
    "epochs",
    "pca_out_dim",
    "pca_sample_count",
    "heldout_fraction",
    "patches_per_image",
];

/// Parsed settings; a later line overrides an earlier one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !DETECT_KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, field: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *field = v;
        }
        Ok(())
    }

    pub fn apply_detect(&self, c: &mut DetectConfig) -> Result<()> {
        self.set("seed", &mut c.seed)?;
        if let Some(k) = self.get("regions")? {
            c.region_count = Some(k);
        }
        self.set("compactness", &mut c.compactness)?;
        self.set("slic_iterations", &mut c.slic_iterations)?;
        self.set("lambda", &mut c.lambda)?;
        self.set("contrast_threshold", &mut c.dog.contrast_threshold)?;
        self.set("octaves", &mut c.dog.octaves)?;
        self.set("scales_per_octave", &mut c.dog.scales_per_octave)?;
        self.set("first_octave", &mut c.dog.first_octave)?;
        self.set("edge_ratio", &mut c.dog.edge_ratio)?;
        self.set("sigma0", &mut c.dog.sigma0)?;
        self.set("input_blur", &mut c.dog.input_blur)?;
        self.set("patch_extent", &mut c.dog.patch_extent)?;
        self.set("knn", &mut c.matching.knn)?;
        self.set("max_distance", &mut c.matching.max_distance)?;
        self.set("min_spatial", &mut c.matching.min_spatial)?;
        self.set("min_matches", &mut c.matching.min_matches)?;
        self.set("ransac_iters", &mut c.ransac.iterations)?;
        self.set("inlier_tol", &mut c.ransac.inlier_tol)?;
        self.set("min_inliers", &mut c.ransac.min_inliers)?;
        self.set("scale_tolerance", &mut c.ransac.scale_tolerance)?;
        if let Some(a) = self.get("max_anisotropy")? {
            c.ransac.max_anisotropy = a;
            c.verify.max_anisotropy = a;
        }
        self.set("zncc", &mut c.verify.zncc_threshold)?;
        self.set("window", &mut c.verify.window)?;
        self.set("max_rounds", &mut c.verify.max_rounds)?;
        self.set("area_ratio", &mut c.verify.area_ratio)?;
        self.set("grid", &mut c.verify.grid)?;
        self.set("search_radius", &mut c.verify.search_radius)?;
        self.set("min_std", &mut c.verify.min_std)?;
        self.set("min_shift", &mut c.verify.min_shift)?;
        self.set("grow", &mut c.verify.grow)?;
        self.set("closing_side", &mut c.map.closing_side)?;
        self.set("min_component", &mut c.map.min_component)?;
        Ok(())
    }

    pub fn apply_train(&self, c: &mut TrainConfig) -> Result<()> {
        self.set("seed", &mut c.seed)?;
        self.set("pair_count", &mut c.pair_count)?;
        self.set("n2", &mut c.n2)?;
        self.set("alpha_quantile", &mut c.alpha_quantile)?;
        self.set("learning_rate", &mut c.learning_rate)?;
        self.set("momentum", &mut c.momentum)?;
        self.set("batch_size", &mut c.batch_size)?;
        self.set("epochs", &mut c.epochs)?;
        self.set("pca_out_dim", &mut c.pca_out_dim)?;
        self.set("pca_sample_count", &mut c.pca_sample_count)?;
        self.set("heldout_fraction", &mut c.heldout_fraction)?;
        Ok(())
    }
}
