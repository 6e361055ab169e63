use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imgcore::{Image, SeedSpec};
use crate::synth::{
    redraw_from_watermarked, CleanAccessCounter, CorruptionRanges, Manifest, SamplePair, TrainMode, WatermarkAsset,
};

/// Input and targets of one minibatch, each `(B, 3, crop, crop)`.
pub struct Batch {
    pub x_wn: Tensor,
    pub x_w: Tensor,
    pub y_w: Tensor,
    pub ids: Vec<String>,
}

/// Per-epoch re-randomisation inputs.
pub struct Redraw {
    pub assets: Vec<WatermarkAsset>,
    pub ranges: CorruptionRanges,
}

/// Training pairs held in memory, with deterministic batching.
///
/// The batch for a given step depends only on `(seed, step)`, so training
/// can resume from a step count alone.
pub struct TrainData {
    pairs: Vec<SamplePair>,
    counter: CleanAccessCounter,
    redraw: Option<Redraw>,
}

impl TrainData {
    pub fn from_pairs(pairs: Vec<SamplePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let counter = CleanAccessCounter::new();
        let pairs = pairs.into_iter().map(|p| p.with_counter(counter.clone())).collect();
        Ok(Self { pairs, counter, redraw: None })
    }

    /// Loads every record of a manifest.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Invalid(format!("manifest under {} has no records", manifest.root.display())));
        }
        let counter = CleanAccessCounter::new();
        let pairs = manifest
            .records
            .iter()
            .map(|r| r.load_pair(&manifest.root, &counter))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, counter, redraw: None })
    }

    /// Re-draw noise and the extra watermark every epoch.
    pub fn with_redraw(mut self, redraw: Redraw) -> Result<Self> {
        redraw.ranges.validate()?;
        if redraw.assets.is_empty() {
            return Err(Error::Invalid("per-epoch redraw needs watermark assets".into()));
        }
        self.redraw = Some(redraw);
        Ok(self)
    }

    pub fn mode(&self) -> TrainMode {
        if self.redraw.is_some() {
            TrainMode::PerEpoch
        } else {
            TrainMode::PreBaked
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of ground-truth reads made through these pairs.
    pub fn clean_reads(&self) -> &CleanAccessCounter {
        &self.counter
    }

    pub fn steps_per_epoch(&self, batch: usize) -> u64 {
        (self.pairs.len() / batch.max(1)).max(1) as u64
    }

    pub fn min_dims(&self) -> (usize, usize) {
        let h = self.pairs.iter().map(|p| p.x_wn.height()).min().unwrap_or(0);
        let w = self.pairs.iter().map(|p| p.x_wn.width()).min().unwrap_or(0);
        (h, w)
    }

    /// Sample indices for `step`: a seeded permutation per epoch, cycled when
    /// the batch exceeds the data.
    fn indices(&self, seed: u64, step: u64, batch: usize) -> (u64, Vec<usize>) {
        let per_epoch = self.steps_per_epoch(batch);
        let epoch = step / per_epoch;
        let within = (step % per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut SeedSpec::new(seed, format!("epoch/{epoch}/order")).rng());
        let idx = (0..batch).map(|j| order[(within * batch + j) % order.len()]).collect();
        (epoch, idx)
    }

    /// Builds the minibatch used at `step`.
    pub fn batch(
        &self,
        seed: u64,
        step: u64,
        batch: usize,
        crop: usize,
        flips: bool,
        device: &Device,
        dtype: DType,
    ) -> Result<Batch> {
        let (epoch, idx) = self.indices(seed, step, batch);
        let mut x_wn = Vec::with_capacity(batch);
        let mut x_w = Vec::with_capacity(batch);
        let mut y_w = Vec::with_capacity(batch);
        let mut ids = Vec::with_capacity(batch);
        for (j, &i) in idx.iter().enumerate() {
            let pair = &self.pairs[i];
            let (h, w) = pair.x_wn.dims();
            if h < crop || w < crop {
                return Err(Error::Invalid(format!("sample {} is {h}x{w}, smaller than crop {crop}", pair.x_wn.id)));
            }
            let (input, target_w) = match &self.redraw {
                None => (pair.x_wn.clone(), pair.y_w.clone()),
                Some(r) => {
                    let s = SeedSpec::new(seed, format!("epoch/{epoch}/{}", pair.x_w.id));
                    let (xn, yw, _) = redraw_from_watermarked(&pair.x_w, &pair.spec, &r.assets, &r.ranges, &s)?;
                    (xn, yw)
                }
            };
            let mut rng = SeedSpec::new(seed, format!("step/{step}/item/{j}")).rng();
            let top = rng.random_range(0..=h - crop);
            let left = rng.random_range(0..=w - crop);
            let flip = flips && rng.random_bool(0.5);
            let cut = |img: &Image| -> Result<Image> {
                let c = img.crop(top, left, crop, crop)?;
                Ok(if flip { c.flip_horizontal() } else { c })
            };
            x_wn.push(cut(&input)?);
            x_w.push(cut(&pair.x_w)?);
            y_w.push(cut(&target_w)?);
            ids.push(pair.x_wn.id.clone());
        }
        let stack = |v: &[Image]| Image::batch_to_tensor(&v.iter().collect::<Vec<_>>(), device, dtype);
        Ok(Batch { x_wn: stack(&x_wn)?, x_w: stack(&x_w)?, y_w: stack(&y_w)?, ids })
    }
}
