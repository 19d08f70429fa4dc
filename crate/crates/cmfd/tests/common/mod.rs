use std::sync::OnceLock;

use cmfd_core::keypoints::DogParams;
use cmfd_core::synthetic::texture;
use cmfd_core::training::{harvest_patches, train_model, TrainConfig, TrainedModel};
use cmfd_core::GradientField;

pub const DESK_TEXTURE_SEEDS: std::ops::Range<u64> = 1000..1008;
pub const DESK_PATCHES_PER_IMAGE: usize = 80;

/// Patches around the strongest keypoints of eight synthetic textures.
pub fn desk_patches() -> &'static [GradientField] {
    static PATCHES: OnceLock<Vec<GradientField>> = OnceLock::new();
    PATCHES.get_or_init(|| {
        DESK_TEXTURE_SEEDS
            .flat_map(|s| harvest_patches(&texture(256, 256, s).to_gray(), &DogParams::default(), DESK_PATCHES_PER_IMAGE).unwrap())
            .collect()
    })
}

/// The desk-profile model, trained once per test binary with seed 0.
pub fn desk_model() -> &'static TrainedModel {
    static MODEL: OnceLock<TrainedModel> = OnceLock::new();
    MODEL.get_or_init(|| train_model(desk_patches(), &TrainConfig::default()).unwrap())
}
