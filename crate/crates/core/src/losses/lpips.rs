use std::path::Path;

use candle_core::{DType, Device, Tensor};

use super::vgg::{FeatureExtractor, Vgg16, VGG16_TAPS};
use crate::error::{Error, Result};
use crate::imgcore::Image;

// Input scaling of the reference perceptual-distance network, mapped from
// its [-1, 1] convention onto [0, 1] inputs.
const SHIFT: [f32; 3] = [-0.030, -0.088, -0.188];
const SCALE: [f32; 3] = [0.458, 0.448, 0.450];

fn scaling() -> ([f32; 3], [f32; 3]) {
    (SHIFT.map(|s| (1.0 + s) / 2.0), SCALE.map(|s| s / 2.0))
}

/// Learned perceptual distance over all five VGG16 stages.
///
/// Features are unit-normalised along channels; squared differences are
/// weighted per channel, averaged over space and summed over stages. With
/// unit weights this is the uncalibrated variant of the metric.
pub struct Lpips {
    net: Vgg16,
    lin: Vec<Tensor>,
}

impl Lpips {
    pub fn new(net: Vgg16, lin: Option<Vec<Tensor>>) -> Result<Self> {
        let channels = net.tap_channels();
        let device = Device::Cpu;
        let lin = match lin {
            Some(l) => {
                if l.len() != channels.len() {
                    return Err(Error::Shape(format!("{} linear heads for {} taps", l.len(), channels.len())));
                }
                l.into_iter()
                    .zip(&channels)
                    .map(|(w, &c)| {
                        if w.elem_count() != c {
                            return Err(Error::Shape(format!("linear head has {} weights, tap has {c} channels", w.elem_count())));
                        }
                        Ok(w.flatten_all()?.to_dtype(DType::F64)?.reshape((1, c, 1, 1))?)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => channels
                .iter()
                .map(|&c| Ok(Tensor::ones((1, c, 1, 1), DType::F64, &device)?))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self { net, lin })
    }

    /// Pretrained VGG16 weights plus optional linear heads (`lin{i}.weight`
    /// or `lin{i}.model.1.weight`).
    pub fn load(vgg: impl AsRef<Path>, lin: Option<&Path>) -> Result<Self> {
        let (mean, std) = scaling();
        let net = Vgg16::load(vgg, &VGG16_TAPS, &Device::Cpu, DType::F64)?.with_normalization(mean, std)?;
        let heads = match lin {
            None => None,
            Some(p) => {
                let t = candle_core::safetensors::load(p, &Device::Cpu)?;
                let heads = (0..VGG16_TAPS.len())
                    .map(|i| {
                        t.get(&format!("lin{i}.weight"))
                            .or_else(|| t.get(&format!("lin{i}.model.1.weight")))
                            .cloned()
                            .ok_or_else(|| Error::ExtractorMissing(format!("{} lacks lin{i}", p.display())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(heads)
            }
        };
        Self::new(net, heads)
    }

    /// Randomly initialised network; only for tests of the plumbing.
    pub fn random(seed: u64) -> Result<Self> {
        let (mean, std) = scaling();
        let net = Vgg16::random(&VGG16_TAPS, seed, &Device::Cpu, DType::F64)?.with_normalization(mean, std)?;
        Self::new(net, None)
    }

    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        a.same_shape(b)?;
        let ta = a.to_tensor(&Device::Cpu, DType::F64)?;
        let tb = b.to_tensor(&Device::Cpu, DType::F64)?;
        self.distance_tensor(&ta, &tb)?.to_scalar::<f64>().map_err(Into::into)
    }

    /// Mean distance over the batch as a scalar tensor.
    pub fn distance_tensor(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let fa = self.net.features(a)?;
        let fb = self.net.features(b)?;
        let mut total: Option<Tensor> = None;
        for ((x, y), w) in fa.iter().zip(&fb).zip(&self.lin) {
            let d = unit(x)?.sub(&unit(y)?)?.sqr()?.broadcast_mul(w)?.sum_keepdim(1)?.mean_all()?;
            total = Some(match total {
                None => d,
                Some(t) => (t + d)?,
            });
        }
        total.ok_or_else(|| Error::Config("no perceptual taps".into()))
    }
}

fn unit(f: &Tensor) -> Result<Tensor> {
    let norm = f.sqr()?.sum_keepdim(1)?.sqrt()?;
    Ok(f.broadcast_div(&(norm + 1e-10)?)?)
}
