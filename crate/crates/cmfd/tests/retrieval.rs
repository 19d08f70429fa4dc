mod common;

use cmfd_core::ckn::describe;
use cmfd_core::eval::{patch_centers, patch_retrieval_eval, transformed_patch_classes, RETRIEVAL_VIEWS};
use cmfd_core::synthetic::texture;
use cmfd_core::training::{random_layer2_model, TrainConfig};
use cmfd_core::CknModel;
use common::{desk_model, desk_patches};

fn accuracy(model: &CknModel) -> f64 {
    let hosts: Vec<_> = (0..10).map(|s| texture(256, 256, 3000 + s).to_gray()).collect();
    let max_scale = RETRIEVAL_VIEWS.iter().map(|v| v.1).fold(1.0, f64::max);
    let centers = patch_centers(&hosts, 300, 51, max_scale, 1).unwrap();
    let (patches, classes) = transformed_patch_classes(&hosts, &centers, &RETRIEVAL_VIEWS, 51).unwrap();
    let descriptors: Vec<Vec<f32>> = patches.iter().map(|p| describe(p, model).unwrap().values).collect();
    patch_retrieval_eval(&descriptors, &classes).unwrap()
}

#[test]
fn trained_model_beats_random_filters_by_ten_points() {
    let trained = accuracy(&desk_model().model);
    let random = accuracy(&random_layer2_model(desk_patches(), &TrainConfig::default(), 9).unwrap());
    println!("transformed-patch accuracy: trained {trained:.3}, random filters {random:.3}");
    assert!(trained - random >= 0.10, "trained {trained:.3} vs random {random:.3}");
}
