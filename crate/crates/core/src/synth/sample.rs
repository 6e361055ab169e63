use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::assets::WatermarkAsset;
use super::composite::{add_gaussian_noise, composite_watermark, footprint_for, CorruptionSpec};
use crate::error::{Error, Result};
use crate::imgcore::{Image, SeedSpec};

/// How the re-watermarked target is produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Extra watermark composited on top of the noise-free watermarked input.
    #[default]
    Literal,
    /// Extra watermark composited on the clean image instead.
    Independent,
}

/// Sampling ranges for corruption draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionRanges {
    /// Transparency levels, drawn uniformly.
    pub transparencies: Vec<f32>,
    /// Transparency levels for the extra watermark; falls back to `transparencies`.
    pub extra_transparencies: Option<Vec<f32>>,
    /// Noise levels on the 0–255 scale, drawn uniformly.
    pub sigmas: Vec<f32>,
    /// Inclusive scale interval.
    pub scale: (f32, f32),
    /// Upper bound on footprint area / image area.
    pub coverage_max: f32,
    /// Allowed asset indices; empty means all.
    pub watermarks: Vec<usize>,
    /// Fixed top-left position, otherwise drawn uniformly.
    pub position: Option<(usize, usize)>,
    pub pairing_mode: PairingMode,
    pub max_retries: usize,
}

impl Default for CorruptionRanges {
    fn default() -> Self {
        Self {
            transparencies: vec![0.3, 0.5, 0.7, 1.0],
            extra_transparencies: None,
            sigmas: vec![0.0, 15.0, 25.0, 50.0],
            scale: (0.5, 1.0),
            coverage_max: 0.4,
            watermarks: Vec::new(),
            position: None,
            pairing_mode: PairingMode::Literal,
            max_retries: 200,
        }
    }
}

impl CorruptionRanges {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.transparencies.is_empty() || self.sigmas.is_empty() {
            return bad("transparency and sigma lists must be non-empty".into());
        }
        let all_t = self
            .transparencies
            .iter()
            .chain(self.extra_transparencies.iter().flatten());
        if let Some(t) = all_t.clone().find(|t| !(0.0..=1.0).contains(*t)) {
            return bad(format!("transparency {t} outside [0, 1]"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0)) {
            return bad(format!("noise sigma {s} must be non-negative"));
        }
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("scale range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if !(self.coverage_max > 0.0 && self.coverage_max <= 1.0) {
            return bad(format!("coverage bound {} outside (0, 1]", self.coverage_max));
        }
        Ok(())
    }
}

/// Counts reads of clean ground truth; shared between pairs of one dataset.
#[derive(Clone, Debug, Default)]
pub struct CleanAccessCounter(Arc<AtomicUsize>);

impl CleanAccessCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    pub(crate) fn record(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// A self-supervised training tuple.
#[derive(Clone, Debug)]
pub struct SamplePair {
    /// Network input: watermarked and noisy.
    pub x_wn: Image,
    /// Noise-free watermarked image, target of the noise-removal branch.
    pub x_w: Image,
    /// Re-watermarked reference, target of the watermark branches.
    pub y_w: Image,
    pub spec: CorruptionSpec,
    pub extra_spec: CorruptionSpec,
    y_clean: Option<Image>,
    clean_reads: CleanAccessCounter,
}

impl SamplePair {
    pub fn new(
        x_wn: Image,
        x_w: Image,
        y_w: Image,
        y_clean: Option<Image>,
        spec: CorruptionSpec,
        extra_spec: CorruptionSpec,
    ) -> Result<Self> {
        x_wn.same_shape(&x_w)?;
        x_w.same_shape(&y_w)?;
        if let Some(y) = &y_clean {
            y.same_shape(&x_w)?;
        }
        Ok(Self {
            x_wn,
            x_w,
            y_w,
            spec,
            extra_spec,
            y_clean,
            clean_reads: CleanAccessCounter::new(),
        })
    }

    /// Attaches a shared counter that records every ground-truth read.
    pub fn with_counter(mut self, counter: CleanAccessCounter) -> Self {
        self.clean_reads = counter;
        self
    }

    /// Evaluation-only ground truth. Every call is counted.
    pub fn y_clean(&self) -> Option<&Image> {
        self.clean_reads.record();
        self.y_clean.as_ref()
    }

    pub fn has_clean(&self) -> bool {
        self.y_clean.is_some()
    }

    pub fn drop_clean(mut self) -> Self {
        self.y_clean = None;
        self
    }

    pub fn counter(&self) -> &CleanAccessCounter {
        &self.clean_reads
    }
}

fn pick<T: Copy>(rng: &mut impl Rng, options: &[T], what: &str) -> Result<T> {
    options
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::Config(format!("no {what} to choose from")))
}

/// Draws one placement for `asset` inside an `image`-sized frame.
pub fn draw_spec(
    image: (usize, usize),
    assets: &[WatermarkAsset],
    ranges: &CorruptionRanges,
    transparencies: &[f32],
    sigmas: &[f32],
    seed: &SeedSpec,
) -> Result<CorruptionSpec> {
    let mut rng = seed.rng();
    let allowed: Vec<usize> = if ranges.watermarks.is_empty() {
        (0..assets.len()).collect()
    } else {
        ranges.watermarks.clone()
    };
    if let Some(i) = allowed.iter().find(|&&i| i >= assets.len()) {
        return Err(Error::Config(format!("watermark index {i} but only {} assets", assets.len())));
    }
    let watermark_index = pick(&mut rng, &allowed, "watermark")?;
    let transparency = pick(&mut rng, transparencies, "transparency")?;
    let noise_sigma = pick(&mut rng, sigmas, "noise level")?;
    let asset_dims = assets[watermark_index].dims();
    let area = (image.0 * image.1) as f32;
    let (lo, hi) = ranges.scale;
    for _ in 0..ranges.max_retries.max(1) {
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let footprint = footprint_for(asset_dims, image, scale);
        let coverage = (footprint.0 * footprint.1) as f32 / area;
        if coverage > ranges.coverage_max {
            continue;
        }
        let position = match ranges.position {
            Some(p) => p,
            None => (
                rng.random_range(0..=image.0 - footprint.0),
                rng.random_range(0..=image.1 - footprint.1),
            ),
        };
        if position.0 + footprint.0 > image.0 || position.1 + footprint.1 > image.1 {
            continue;
        }
        return Ok(CorruptionSpec {
            transparency,
            scale,
            coverage,
            position,
            footprint,
            watermark_index,
            noise_sigma,
        });
    }
    Err(Error::Placement(format!(
        "no placement for asset {watermark_index} ({}x{}) in a {}x{} image after {} tries \
         (scale {lo}..{hi}, coverage <= {}, position {:?})",
        asset_dims.0, asset_dims.1, image.0, image.1, ranges.max_retries, ranges.coverage_max, ranges.position
    )))
}

/// Builds `(x_wn, x_w, y_w)` from a clean image.
///
/// `x_w` composites one drawn watermark, `x_wn = x_w + noise`, and `y_w`
/// adds an independently drawn noise-free watermark on top of `x_w` (or of
/// the clean image under [`PairingMode::Independent`]).
pub fn make_sample(
    y_clean: &Image,
    assets: &[WatermarkAsset],
    ranges: &CorruptionRanges,
    seed: &SeedSpec,
) -> Result<SamplePair> {
    if assets.is_empty() {
        return Err(Error::Invalid("at least one watermark asset is required".into()));
    }
    ranges.validate()?;
    let dims = y_clean.dims();
    let spec = draw_spec(dims, assets, ranges, &ranges.transparencies, &ranges.sigmas, &seed.child("spec"))?;
    let extra_t = ranges.extra_transparencies.as_deref().unwrap_or(&ranges.transparencies);
    let extra = draw_spec(dims, assets, &ranges.unpinned(), extra_t, &[0.0], &seed.child("extra"))?;
    finish_sample(y_clean, assets, spec, extra, ranges.pairing_mode, seed)
}

impl CorruptionRanges {
    /// The same ranges without a fixed position (the extra mark is always free).
    fn unpinned(&self) -> CorruptionRanges {
        CorruptionRanges {
            position: None,
            ..self.clone()
        }
    }
}

/// Applies already-drawn specs to a clean image.
pub fn finish_sample(
    y_clean: &Image,
    assets: &[WatermarkAsset],
    spec: CorruptionSpec,
    extra_spec: CorruptionSpec,
    pairing: PairingMode,
    seed: &SeedSpec,
) -> Result<SamplePair> {
    let asset = assets
        .get(spec.watermark_index)
        .ok_or_else(|| Error::Config(format!("no asset {}", spec.watermark_index)))?;
    let extra_asset = assets
        .get(extra_spec.watermark_index)
        .ok_or_else(|| Error::Config(format!("no asset {}", extra_spec.watermark_index)))?;
    let x_w = composite_watermark(y_clean, asset, &spec)?.with_id(y_clean.id.clone());
    let x_wn = add_gaussian_noise(&x_w, spec.noise_sigma, &seed.child("noise"))?;
    let y_w = match pairing {
        PairingMode::Literal => composite_watermark(&x_w, extra_asset, &extra_spec)?,
        PairingMode::Independent => composite_watermark(y_clean, extra_asset, &extra_spec)?,
    };
    SamplePair::new(x_wn, x_w, y_w, Some(y_clean.clone()), spec, extra_spec)
}

/// Re-draws noise and the extra watermark on top of a stored noise-free
/// watermarked image, without touching clean ground truth.
pub fn redraw_from_watermarked(
    x_w: &Image,
    spec: &CorruptionSpec,
    assets: &[WatermarkAsset],
    ranges: &CorruptionRanges,
    seed: &SeedSpec,
) -> Result<(Image, Image, CorruptionSpec)> {
    let mut rng = seed.child("sigma").rng();
    let sigma = pick(&mut rng, &ranges.sigmas, "noise level")?;
    let x_wn = add_gaussian_noise(x_w, sigma, &seed.child("noise"))?;
    let extra_t = ranges.extra_transparencies.as_deref().unwrap_or(&ranges.transparencies);
    let extra = draw_spec(x_w.dims(), assets, &ranges.unpinned(), extra_t, &[0.0], &seed.child("extra"))?;
    let asset = &assets[extra.watermark_index];
    let y_w = composite_watermark(x_w, asset, &extra)?;
    let _ = spec;
    Ok((x_wn, y_w, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::builtin_assets;

    fn scene() -> Image {
        Image::from_fn(96, 128, "scene", |r, c| {
            [r as f32 / 96.0, c as f32 / 128.0, ((r + c) % 7) as f32 / 7.0]
        })
        .unwrap()
    }

    fn pinned() -> CorruptionRanges {
        CorruptionRanges {
            transparencies: vec![0.3],
            sigmas: vec![25.0],
            watermarks: vec![6],
            position: Some((10, 12)),
            scale: (0.6, 0.6),
            ..Default::default()
        }
    }

    #[test]
    fn pinned_ranges_are_deterministic() {
        let assets = builtin_assets();
        let seed = SeedSpec::new(5, "scene");
        let a = make_sample(&scene(), &assets, &pinned(), &seed).unwrap();
        let b = make_sample(&scene(), &assets, &pinned(), &seed).unwrap();
        assert_eq!(a.x_wn, b.x_wn);
        assert_eq!(a.y_w, b.y_w);
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.spec.position, (10, 12));
        assert_eq!(a.spec.watermark_index, 6);
        assert_eq!(a.spec.transparency, 0.3);
    }

    #[test]
    fn zero_noise_gives_identical_input_and_target() {
        let assets = builtin_assets();
        let ranges = CorruptionRanges { sigmas: vec![0.0], ..Default::default() };
        let s = make_sample(&scene(), &assets, &ranges, &SeedSpec::new(1, "z")).unwrap();
        assert_eq!(s.x_wn, s.x_w);
    }

    #[test]
    fn opaque_mark_replaces_clean_pixels() {
        let assets = builtin_assets();
        let ranges = CorruptionRanges { transparencies: vec![1.0], ..pinned() };
        let s = make_sample(&scene(), &assets, &ranges, &SeedSpec::new(3, "o")).unwrap();
        let mark = assets[6].resized(s.spec.footprint.0, s.spec.footprint.1);
        let (top, left) = s.spec.position;
        let mut checked = 0;
        for r in 0..s.spec.footprint.0 {
            for c in 0..s.spec.footprint.1 {
                let px = mark.get(r, c);
                if px[3] == 1.0 {
                    let got = s.x_w.get(top + r, left + c);
                    for k in 0..3 {
                        assert_eq!(got[k], px[k].clamp(0.0, 1.0));
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn regions_outside_footprints_match() {
        let assets = builtin_assets();
        let clean = scene();
        let s = make_sample(&clean, &assets, &CorruptionRanges::default(), &SeedSpec::new(9, "r")).unwrap();
        let inside = |spec: &CorruptionSpec, r: usize, c: usize| {
            r >= spec.position.0
                && r < spec.position.0 + spec.footprint.0
                && c >= spec.position.1
                && c < spec.position.1 + spec.footprint.1
        };
        for r in 0..clean.height() {
            for c in 0..clean.width() {
                if !inside(&s.spec, r, c) {
                    assert_eq!(s.x_w.get(r, c), clean.get(r, c));
                }
                if !inside(&s.extra_spec, r, c) {
                    assert_eq!(s.y_w.get(r, c), s.x_w.get(r, c));
                }
            }
        }
        assert!(s.spec.coverage <= 0.4 && s.extra_spec.coverage <= 0.4);
        assert_eq!(s.extra_spec.noise_sigma, 0.0);
    }

    #[test]
    fn clean_reads_are_counted() {
        let assets = builtin_assets();
        let counter = CleanAccessCounter::new();
        let s = make_sample(&scene(), &assets, &pinned(), &SeedSpec::new(1, "c"))
            .unwrap()
            .with_counter(counter.clone());
        let _ = (&s.x_wn, &s.x_w, &s.y_w);
        assert_eq!(counter.count(), 0);
        assert!(s.y_clean().is_some());
        assert_eq!(counter.count(), 1);
    }

    #[test]
    fn impossible_placement_reports_diagnostic() {
        let assets = builtin_assets();
        let ranges = CorruptionRanges { coverage_max: 0.001, max_retries: 5, ..pinned() };
        match make_sample(&scene(), &assets, &ranges, &SeedSpec::new(1, "p")) {
            Err(Error::Placement(msg)) => assert!(msg.contains("coverage")),
            other => panic!("expected placement error, got {other:?}"),
        }
        assert!(make_sample(&scene(), &[], &pinned(), &SeedSpec::new(1, "p")).is_err());
    }

    #[test]
    fn independent_pairing_starts_from_clean() {
        let assets = builtin_assets();
        let ranges = CorruptionRanges { pairing_mode: PairingMode::Independent, ..Default::default() };
        let clean = scene();
        let s = make_sample(&clean, &assets, &ranges, &SeedSpec::new(2, "i")).unwrap();
        let e = &s.extra_spec;
        // Far corner outside the extra mark must equal the clean image.
        for r in 0..clean.height() {
            for c in 0..clean.width() {
                let in_extra = r >= e.position.0 && r < e.position.0 + e.footprint.0 && c >= e.position.1 && c < e.position.1 + e.footprint.1;
                if !in_extra {
                    assert_eq!(s.y_w.get(r, c), clean.get(r, c));
                }
            }
        }
    }
}
