use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgcore::SeedSpec;

/// A frozen network mapping `(B, 3, H, W)` images in `[0, 1]` to feature taps.
///
/// Implementations own their input normalisation and never expose
/// trainable parameters, so gradients reach only the input.
pub trait FeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    fn name(&self) -> String;
}

/// VGG16 `features` layout: output widths, `0` marks a 2×2 max pool.
const VGG16_LAYOUT: [usize; 17] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512];

/// Post-activation taps, named after the last ReLU before each pool.
pub const VGG16_TAPS: [&str; 5] = ["relu1_2", "relu2_2", "relu3_3", "relu4_3", "relu5_3"];

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
}

/// Conv index in the torchvision `features` sequential for each conv layer.
fn torchvision_indices() -> Vec<usize> {
    let mut idx = 0;
    let mut out = Vec::new();
    for &w in &VGG16_LAYOUT {
        if w == 0 {
            idx += 1;
        } else {
            out.push(idx);
            idx += 2;
        }
    }
    out
}

/// Number of conv layers needed to reach `tap`, and the stage it closes.
fn tap_depth(tap: &str) -> Result<usize> {
    let stage = VGG16_TAPS
        .iter()
        .position(|t| *t == tap)
        .ok_or_else(|| Error::Config(format!("unknown feature tap {tap}; expected one of {VGG16_TAPS:?}")))?;
    let mut convs = 0;
    let mut pools = 0;
    for &w in &VGG16_LAYOUT {
        if w == 0 {
            if pools == stage {
                break;
            }
            pools += 1;
        } else {
            convs += 1;
        }
    }
    Ok(convs)
}

/// Frozen 16-layer VGG feature extractor.
pub struct Vgg16 {
    convs: Vec<ConvLayer>,
    taps: Vec<(String, usize)>,
    mean: Tensor,
    std: Tensor,
}

impl Vgg16 {
    /// Builds from torchvision-style tensors `features.{i}.weight` / `.bias`.
    pub fn from_tensors(
        tensors: &HashMap<String, Tensor>,
        taps: &[&str],
        mean: [f32; 3],
        std: [f32; 3],
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("at least one feature tap is required".into()));
        }
        let mut tap_list = taps
            .iter()
            .map(|t| Ok((t.to_string(), tap_depth(t)?)))
            .collect::<Result<Vec<_>>>()?;
        tap_list.sort_by_key(|(_, d)| *d);
        let depth = tap_list.last().map(|(_, d)| *d).unwrap_or(0);
        let widths: Vec<usize> = VGG16_LAYOUT.iter().copied().filter(|w| *w > 0).collect();
        let indices = torchvision_indices();
        let mut convs = Vec::with_capacity(depth);
        let mut in_ch = 3;
        for (&out_ch, idx) in widths.iter().zip(indices).take(depth) {
            let fetch = |suffix: &str, shape: &[usize]| -> Result<Tensor> {
                let key = format!("features.{idx}.{suffix}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::ExtractorMissing(format!("weights lack {key}")))?;
                if t.dims() != shape {
                    return Err(Error::Shape(format!("{key}: expected {shape:?}, found {:?}", t.dims())));
                }
                Ok(t.to_device(device)?.to_dtype(dtype)?.detach())
            };
            convs.push(ConvLayer {
                weight: fetch("weight", &[out_ch, in_ch, 3, 3])?,
                bias: fetch("bias", &[out_ch])?,
            });
            in_ch = out_ch;
        }
        let stat = |v: [f32; 3]| -> Result<Tensor> {
            Ok(Tensor::new(&v, device)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?)
        };
        Ok(Self {
            convs,
            taps: tap_list,
            mean: stat(mean)?,
            std: stat(std)?,
        })
    }

    /// Loads pretrained weights from a safetensors file.
    pub fn load(path: impl AsRef<Path>, taps: &[&str], device: &Device, dtype: DType) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::ExtractorMissing(format!(
                "{} not found; run scripts/fetch_vgg.py or train with alpha = 0",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::from_tensors(&tensors, taps, IMAGENET_MEAN, IMAGENET_STD, device, dtype)
    }

    /// He-initialised weights; for tests and offline plumbing only.
    pub fn random(taps: &[&str], seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        let mut tensors = HashMap::new();
        let mut in_ch = 3;
        let widths = VGG16_LAYOUT.iter().copied().filter(|w| *w > 0);
        for (out_ch, idx) in widths.zip(torchvision_indices()) {
            let fan_in = (in_ch * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let mut rng = SeedSpec::new(seed, format!("vgg/{idx}")).rng();
            let n = out_ch * in_ch * 9;
            let w: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            tensors.insert(format!("features.{idx}.weight"), Tensor::from_vec(w, (out_ch, in_ch, 3, 3), &Device::Cpu)?);
            tensors.insert(format!("features.{idx}.bias"), Tensor::zeros(out_ch, DType::F32, &Device::Cpu)?);
            in_ch = out_ch;
        }
        Self::from_tensors(&tensors, taps, IMAGENET_MEAN, IMAGENET_STD, device, dtype)
    }

    /// Replaces the input normalisation constants.
    pub fn with_normalization(mut self, mean: [f32; 3], std: [f32; 3]) -> Result<Self> {
        let (device, dtype) = (self.mean.device().clone(), self.mean.dtype());
        self.mean = Tensor::new(&mean, &device)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        self.std = Tensor::new(&std, &device)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(self)
    }

    pub fn tap_names(&self) -> Vec<&str> {
        self.taps.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps.iter().map(|(_, d)| self.convs[d - 1].weight.dim(0).unwrap_or(0)).collect()
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows and columns are dropped.
///
/// Written as a reshape plus two max reductions because candle's pooling
/// backward scales the gradient by the window's argmax density (1/4 for a
/// unique maximum) instead of routing it whole to the maximum.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("cannot pool a {h}x{w} map")));
    }
    let even = x.narrow(2, 0, 2 * oh)?.narrow(3, 0, 2 * ow)?.contiguous()?;
    Ok(even.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

impl FeatureExtractor for Vgg16 {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("feature extractor expects 3 channels, got {c}")));
        }
        let mut h = x.clamp(0.0, 1.0)?.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(self.taps.len());
        let mut next_tap = 0;
        let mut conv_i = 0;
        for &w in &VGG16_LAYOUT {
            if next_tap == self.taps.len() {
                break;
            }
            if w == 0 {
                h = max_pool2(&h)?;
                continue;
            }
            let layer = &self.convs[conv_i];
            h = h
                .conv2d(&layer.weight, 1, 1, 1, 1)?
                .broadcast_add(&layer.bias.reshape((1, w, 1, 1))?)?
                .relu()?;
            conv_i += 1;
            while next_tap < self.taps.len() && self.taps[next_tap].1 == conv_i {
                out.push(h.clone());
                next_tap += 1;
            }
        }
        Ok(out)
    }

    fn name(&self) -> String {
        format!("vgg16[{}]", self.tap_names().join(","))
    }
}
