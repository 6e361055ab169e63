//! Convolution, normalisation and resampling primitives in NCHW layout.

use candle_core::{Tensor, D};

use super::params::{live, Init, Scope};
use crate::error::{Error, Result};

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// 1×1 convolution implemented as a batched matmul.
#[derive(Clone, Debug)]
pub struct Pointwise {
    weight: Tensor,
    bias: Tensor,
    in_ch: usize,
    out_ch: usize,
}

impl Pointwise {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        let bound = fan_in_bound(in_ch);
        Ok(Self {
            weight: scope.var("weight", (out_ch, in_ch), Init::Uniform(bound))?,
            bias: scope.var("bias", out_ch, Init::Uniform(bound))?,
            in_ch,
            out_ch,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.in_ch {
            return Err(Error::Shape(format!(
                "pointwise conv expects {} channels, got {c}",
                self.in_ch
            )));
        }
        let flat = x.reshape((b, c, h * w))?;
        // candle's batched matmul mishandles a stride-0 batch; materialize it.
        let y = live(&self.weight).broadcast_left(b)?.contiguous()?.matmul(&flat)?;
        let y = y.broadcast_add(&live(&self.bias).reshape((1, self.out_ch, 1))?)?;
        Ok(y.reshape((b, self.out_ch, h, w))?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.in_ch * self.out_ch * h * w) as u64
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }
}

/// Dense 3×3 convolution with padding 1.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    weight: Tensor,
    bias: Tensor,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

impl Conv3x3 {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let bound = fan_in_bound(in_ch * 9);
        Ok(Self {
            weight: scope.var("weight", (out_ch, in_ch, 3, 3), Init::Uniform(bound))?,
            bias: scope.var("bias", out_ch, Init::Uniform(bound))?,
            in_ch,
            out_ch,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.in_ch {
            return Err(Error::Shape(format!(
                "3x3 conv expects {} channels, got {c}",
                self.in_ch
            )));
        }
        let y = x.conv2d(&live(&self.weight), 1, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&live(&self.bias).reshape((1, self.out_ch, 1, 1))?)?)
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_size(h, w);
        (self.in_ch * self.out_ch * 9 * oh * ow) as u64
    }
}

/// Depthwise 3×3 convolution (one filter per channel, padding 1).
///
/// Evaluated as nine shifted multiply-adds, which keeps every step
/// differentiable and avoids a per-channel grouped convolution.
#[derive(Clone, Debug)]
pub struct Depthwise3x3 {
    weight: Tensor,
    bias: Tensor,
    channels: usize,
}

impl Depthwise3x3 {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        let bound = fan_in_bound(9);
        let weight = scope.var("weight", (channels, 1, 3, 3), Init::Uniform(bound))?;
        let bias = scope.var("bias", channels, Init::Uniform(bound))?;
        Ok(Self {
            weight,
            bias,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "depthwise conv expects {} channels, got {c}",
                self.channels
            )));
        }
        // Taps are sliced per call: narrowing copies, and a copy taken at
        // construction would not see in-place parameter updates.
        let flat = live(&self.weight).reshape((c, 9))?;
        let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        let mut acc = live(&self.bias).reshape((1, c, 1, 1))?;
        for ky in 0..3 {
            let rows = padded.narrow(2, ky, h)?;
            for kx in 0..3 {
                let shifted = rows.narrow(3, kx, w)?;
                let tap = flat.narrow(1, ky * 3 + kx, 1)?.reshape((1, c, 1, 1))?;
                acc = shifted.broadcast_mul(&tap)?.broadcast_add(&acc)?;
            }
        }
        Ok(acc)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.channels * 9 * h * w) as u64
    }
}

/// Layer normalisation across channels at every spatial location.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    weight: Tensor,
    bias: Tensor,
    channels: usize,
    eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl LayerNorm2d {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.var("weight", channels, Init::Const(1.0))?,
            bias: scope.var("bias", channels, Init::Const(0.0))?,
            channels,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "layer norm has {} channels, input has {c}",
                self.channels
            )));
        }
        layer_norm_channel(x, &live(&self.weight), &live(&self.bias), self.eps)
    }
}

/// Normalises `x` over dim 1 to zero mean / unit variance, then applies
/// the per-channel affine `scale`, `bias`.
pub fn layer_norm_channel(x: &Tensor, scale: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.dim(1)?;
    if scale.elem_count() != c || bias.elem_count() != c {
        return Err(Error::Shape(format!(
            "layer norm parameters have {} / {} entries for {c} channels",
            scale.elem_count(),
            bias.elem_count()
        )));
    }
    let mu = x.mean_keepdim(1)?;
    let centered = x.broadcast_sub(&mu)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    let shape = (1, c, 1, 1);
    Ok(normed
        .broadcast_mul(&scale.reshape(shape)?)?
        .broadcast_add(&bias.reshape(shape)?)?)
}

/// Rearranges `(B, 4C, H, W)` into `(B, C, 2H, 2W)`.
pub fn pixel_shuffle2(x: &Tensor) -> Result<Tensor> {
    let (b, c4, h, w) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(Error::Shape(format!("pixel shuffle needs channels divisible by 4, got {c4}")));
    }
    let c = c4 / 4;
    Ok(x
        .reshape((b, c, 2, 2, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Exact GELU, `x · Φ(x)`. Composed from `erf` because candle's fused
/// `gelu_erf` backward truncates 1/√(2π) to six digits.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let cdf = ((x * std::f64::consts::FRAC_1_SQRT_2)?.erf()? + 1.0)? * 0.5;
    Ok(x.mul(&cdf?)?)
}

/// Softmax along the last dimension. Entries equal to `-inf` get weight 0.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let total = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&total)?)
}

/// 3×3 stride-2 convolution between stage widths.
#[derive(Clone, Debug)]
pub struct Downsample {
    conv: Conv3x3,
}

impl Downsample {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv3x3::new(&scope.pp("conv"), in_ch, out_ch, 2)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("downsample needs even spatial dims, got {h}x{w}")));
        }
        self.conv.forward(x)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w)
    }
}

/// 1×1 convolution to `4·out` channels followed by a ×2 pixel shuffle.
#[derive(Clone, Debug)]
pub struct Upsample {
    conv: Pointwise,
}

impl Upsample {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Pointwise::new(&scope.pp("conv"), in_ch, out_ch * 4)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        pixel_shuffle2(&self.conv.forward(x)?)
    }

    /// MACs for an input of `h`×`w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w)
    }
}
