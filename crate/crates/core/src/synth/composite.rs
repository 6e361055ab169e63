use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::assets::WatermarkAsset;
use crate::error::{Error, Result};
use crate::imgcore::{Image, SeedSpec};

/// One concrete watermark + noise draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Global opacity multiplier applied to the asset's alpha.
    pub transparency: f32,
    /// Fraction of the largest size at which the asset fits the image.
    pub scale: f32,
    /// Footprint area divided by image area.
    pub coverage: f32,
    /// Top-left corner of the footprint, `(row, col)`.
    pub position: (usize, usize),
    /// Footprint size, `(height, width)`.
    pub footprint: (usize, usize),
    pub watermark_index: usize,
    /// Noise standard deviation on the 0–255 scale.
    pub noise_sigma: f32,
}

/// Footprint of `asset` at `scale` relative to its largest aspect-preserving
/// fit inside an `image_h`×`image_w` frame.
pub fn footprint_for(asset: (usize, usize), image: (usize, usize), scale: f32) -> (usize, usize) {
    let fit = (image.0 as f32 / asset.0 as f32).min(image.1 as f32 / asset.1 as f32);
    let f = fit * scale;
    let h = ((asset.0 as f32 * f).round() as usize).clamp(1, image.0);
    let w = ((asset.1 as f32 * f).round() as usize).clamp(1, image.1);
    (h, w)
}

/// Alpha-blends the asset: `out = a·W + (1 − a)·base` with
/// `a = transparency · asset_alpha`, inside the footprint only.
///
/// Pixels outside the footprint are copied unchanged; footprint pixels are
/// clamped to `[0, 1]`.
pub fn composite_watermark(base: &Image, asset: &WatermarkAsset, spec: &CorruptionSpec) -> Result<Image> {
    let (h, w) = base.dims();
    let (fh, fw) = spec.footprint;
    let (top, left) = spec.position;
    if fh == 0 || fw == 0 || top + fh > h || left + fw > w {
        return Err(Error::Placement(format!(
            "footprint {fh}x{fw} at ({top},{left}) does not fit a {h}x{w} image"
        )));
    }
    if !(0.0..=1.0).contains(&spec.transparency) {
        return Err(Error::Invalid(format!("transparency {} outside [0, 1]", spec.transparency)));
    }
    let mark = asset.resized(fh, fw);
    let mut out = base.clone();
    for r in 0..fh {
        for c in 0..fw {
            let px = mark.get(r, c);
            let a = spec.transparency * px[3];
            if a == 0.0 {
                continue;
            }
            let b = base.get(top + r, left + c);
            let blend = |k: usize| (a * px[k] + (1.0 - a) * b[k]).clamp(0.0, 1.0);
            out.set(top + r, left + c, [blend(0), blend(1), blend(2)]);
        }
    }
    Ok(out)
}

/// Adds i.i.d. `N(0, (sigma_255/255)²)` noise without clamping.
pub fn add_gaussian_noise(img: &Image, sigma_255: f32, seed: &SeedSpec) -> Result<Image> {
    if !(sigma_255 >= 0.0) {
        return Err(Error::Invalid(format!("noise sigma must be non-negative, got {sigma_255}")));
    }
    if sigma_255 == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0f32, sigma_255 / 255.0)
        .map_err(|e| Error::Invalid(format!("noise distribution: {e}")))?;
    let mut rng = seed.rng();
    let mut out = img.clone();
    out.pixels_mut()
        .iter_mut()
        .for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}
