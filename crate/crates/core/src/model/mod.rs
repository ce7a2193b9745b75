//! The spectral-spatial classifier, its ablations and baselines, and training.
//!
//! The 2D branch treats a patch as a `B`-channel image and the 3D branch as
//! a one-channel volume. Both run five stages with the spatial schedule
//! 3x3/1 pad 0, 3x3/1 pad 1, 3x3/1 pad 0, 2x2/2, 3x3/1 pad 1, so an 11x11
//! patch shrinks to 9, 9, 7, 3, 3. After stages two to four the 2D map and
//! the 3D map (depth folded into channels) are concatenated, passed through
//! an attention block and an SE residual unit, and fed to the next 2D stage.
//! The fifth fusion goes to a 1x1 convolution head, global average pooling,
//! dropout and a dense classifier.

mod config;
mod data;
mod net;
mod train;

pub use config::{
    fit_depth_kernels, ModelConfig, ModelKind, StagePlan, Variant, DEPTH_STRIDES, FUSION_STAGES, SPATIAL_SCHEDULE,
    STAGE_NAMES,
};
pub use data::{
    adapt_bands, batch_tensor, class_mean_cubes, extract_patches, samples_from_cubes, stratified_indices, stratified_split,
    Patch, Sample,
};
pub use net::{build_baseline, build_plb_model, ForwardOutput, FusionBlock, Model};
pub use train::{ablation_csv, ablation_means, evaluate, predict, run_ablation, train, AblationRow, Prediction, TrainReport};

#[cfg(test)]
mod tests;
