//! Training objective: pixel L1 structural terms plus perceptual texture
//! terms through a frozen feature extractor.

mod lpips;
mod mixed;
mod vgg;

pub use lpips::Lpips;
pub use mixed::{
    feature_distance, mean_abs_diff, mixed_loss, mixed_loss_for_pair, structural_loss, texture_loss, LossBreakdown,
    MixedLoss, DEFAULT_ALPHA,
};
pub use vgg::{max_pool2, FeatureExtractor, Vgg16, IMAGENET_MEAN, IMAGENET_STD, VGG16_TAPS};
