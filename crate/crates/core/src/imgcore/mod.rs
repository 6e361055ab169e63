//! Image data model, colour conversion, quality metrics, keyed randomness and
//! PNG I/O shared by every other stage of the pipeline.

mod image;
mod io;
mod metrics;
mod seed;

pub use image::{to_luma_ycbcr, Image};
pub use io::{
    load_image, load_rgba, save_image, save_image_affine16, save_image_luma, save_rgba, BitDepth,
};
pub use metrics::{
    lpips, psnr, psnr_luma, ssim_y, ssim_y_with, MetricReport, PsnrDomain, SsimParams,
};
pub use seed::SeedSpec;
pub(crate) use metrics::inf_as_string;
