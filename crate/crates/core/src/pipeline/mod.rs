//! The two-stage landmark procedure: augmentation, patch extraction, the
//! learning-rate schedule, stage-1 and stage-2 training, and two-stage
//! inference.

pub mod augment;
pub mod patch;
pub mod schedule;
pub mod train;

pub use augment::{augment, expand, AugmentConfig, Augmentation, AugmentationRegistry};
pub use patch::{extract_patch, PatchSpec};
pub use schedule::{lr_at, TrainConfig};
pub use train::{
    predict_stage1, predict_two_stage, refine_with_stage2, train_stage1, train_stage2, History, Stage2Models,
};

use crate::heatmap::LandmarkSet;
use crate::raster::Raster;

/// One annotated grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster,
    pub landmarks: LandmarkSet,
}
