use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::vgg::FeatureExtractor;
use crate::error::{Error, Result};
use crate::sshnet::ForwardOutputs;
use crate::synth::SamplePair;

/// Weight of the texture terms in the mixed objective.
pub const DEFAULT_ALPHA: f64 = 0.024;

/// Scalar values of every loss term for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s1: f64,
    pub l_s2: f64,
    pub l_s3: f64,
    pub l_t1: f64,
    pub l_t2: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    pub fn structural(&self) -> f64 {
        self.l_s1 + self.l_s2 + self.l_s3
    }

    pub fn texture(&self) -> f64 {
        self.l_t1 + self.l_t2
    }
}

/// Differentiable total together with its logged breakdown.
pub struct MixedLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

/// Mean absolute difference over every element.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("loss operands {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(a.sub(b)?.abs()?.mean_all()?)
}

/// Pixel L1 terms: noise branch against `x_w`, watermark branch and fused
/// output against `y_w`. Absent branches contribute nothing.
pub fn structural_loss(outs: &ForwardOutputs, x_w: &Tensor, y_w: &Tensor) -> Result<[Option<Tensor>; 3]> {
    let l_s1 = outs.y_n.as_ref().map(|y| mean_abs_diff(y, x_w)).transpose()?;
    let l_s2 = outs.y_wn.as_ref().map(|y| mean_abs_diff(y, y_w)).transpose()?;
    let l_s3 = mean_abs_diff(&outs.y_hat, y_w)?;
    Ok([l_s1, l_s2, Some(l_s3)])
}

/// Mean L1 distance between feature taps, averaged over taps.
pub fn feature_distance(fx: &dyn FeatureExtractor, a: &Tensor, target_features: &[Tensor]) -> Result<Tensor> {
    let fa = fx.features(a)?;
    if fa.len() != target_features.len() || fa.is_empty() {
        return Err(Error::Shape(format!("{} feature taps vs {}", fa.len(), target_features.len())));
    }
    let n = fa.len() as f64;
    let mut sum: Option<Tensor> = None;
    for (x, y) in fa.iter().zip(target_features) {
        let d = mean_abs_diff(x, y)?;
        sum = Some(match sum {
            None => d,
            Some(s) => (s + d)?,
        });
    }
    Ok((sum.expect("non-empty taps") / n)?)
}

/// Perceptual L1 terms of the watermark branch and the fused output against `y_w`.
pub fn texture_loss(outs: &ForwardOutputs, y_w: &Tensor, fx: &dyn FeatureExtractor) -> Result<[Option<Tensor>; 2]> {
    let target: Vec<Tensor> = fx.features(y_w)?.into_iter().map(|t| t.detach()).collect();
    let l_t1 = outs.y_wn.as_ref().map(|y| feature_distance(fx, y, &target)).transpose()?;
    let l_t2 = feature_distance(fx, &outs.y_hat, &target)?;
    Ok([l_t1, Some(l_t2)])
}

fn scalar(t: &Option<Tensor>) -> Result<f64> {
    match t {
        None => Ok(0.0),
        Some(t) => Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?),
    }
}

/// `L = L_s + alpha * L_t`. With `alpha == 0` the extractor is not consulted.
pub fn mixed_loss(
    outs: &ForwardOutputs,
    x_w: &Tensor,
    y_w: &Tensor,
    alpha: f64,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<MixedLoss> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("texture weight {alpha} must be non-negative")));
    }
    let s = structural_loss(outs, x_w, y_w)?;
    let t = if alpha > 0.0 {
        let fx = fx.ok_or_else(|| {
            Error::ExtractorMissing("texture loss requested but no feature extractor loaded".into())
        })?;
        texture_loss(outs, y_w, fx)?
    } else {
        [None, None]
    };
    let mut total = s[2].clone().expect("fused term always present");
    for term in [&s[0], &s[1]].into_iter().flatten() {
        total = (total + term)?;
    }
    let texture: Vec<&Tensor> = t.iter().flatten().collect();
    if !texture.is_empty() {
        let mut lt = texture[0].clone();
        for term in &texture[1..] {
            lt = (lt + *term)?;
        }
        total = (total + (lt * alpha)?)?;
    }
    let breakdown = LossBreakdown {
        l_s1: scalar(&s[0])?,
        l_s2: scalar(&s[1])?,
        l_s3: scalar(&s[2])?,
        l_t1: scalar(&t[0])?,
        l_t2: scalar(&t[1])?,
        total: total.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        alpha,
    };
    Ok(MixedLoss { total, breakdown })
}

/// [`mixed_loss`] against the targets of one sample. Only `x_w` and `y_w`
/// are read; clean ground truth is never touched.
pub fn mixed_loss_for_pair(
    outs: &ForwardOutputs,
    pair: &SamplePair,
    alpha: f64,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<MixedLoss> {
    let device = outs.y_hat.device();
    let dtype = outs.y_hat.dtype();
    let x_w = pair.x_w.to_tensor(device, dtype)?;
    let y_w = pair.y_w.to_tensor(device, dtype)?;
    mixed_loss(outs, &x_w, &y_w, alpha, fx)
}
