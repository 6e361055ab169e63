//! Nonlinear-activation-free convolution block and its gating pieces.

use candle_core::Tensor;

use super::layers::{Depthwise3x3, LayerNorm2d, Pointwise};
use super::params::Scope;
use crate::error::{Error, Result};

/// Splits channels in half and multiplies the halves.
pub fn simple_gate(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)?;
    if c % 2 != 0 {
        return Err(Error::Shape(format!("simple gate needs an even channel count, got {c}")));
    }
    let a = x.narrow(1, 0, c / 2)?;
    let b = x.narrow(1, c / 2, c / 2)?;
    Ok((a * b)?)
}

/// Simplified channel attention: global average pool, 1×1 conv, rescale.
#[derive(Clone, Debug)]
pub struct SimplifiedChannelAttention {
    conv: Pointwise,
}

impl SimplifiedChannelAttention {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Pointwise::new(&scope.pp("conv"), channels, channels)?,
        })
    }

    /// Per-channel gain `(B, C, 1, 1)` that multiplies the input.
    pub fn gain(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = x.mean_keepdim((2, 3))?;
        self.conv.forward(&pooled)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gain(x)?)?)
    }

    pub fn macs(&self) -> u64 {
        self.conv.macs(1, 1)
    }
}

/// Two residual stages:
/// `x + conv(sca(sg(dw(conv(ln(x))))))`, then `y + conv(sg(conv(ln(y))))`.
#[derive(Clone, Debug)]
pub struct NafBlock {
    norm1: LayerNorm2d,
    expand1: Pointwise,
    dw: Depthwise3x3,
    sca: SimplifiedChannelAttention,
    project1: Pointwise,
    norm2: LayerNorm2d,
    expand2: Pointwise,
    project2: Pointwise,
    channels: usize,
}

/// Internal expansion so that the simple gate returns to the block width.
pub const NAF_EXPANSION: usize = 2;

impl NafBlock {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        let wide = channels * NAF_EXPANSION;
        Ok(Self {
            norm1: LayerNorm2d::new(&scope.pp("norm1"), channels)?,
            expand1: Pointwise::new(&scope.pp("expand1"), channels, wide)?,
            dw: Depthwise3x3::new(&scope.pp("dw"), wide)?,
            sca: SimplifiedChannelAttention::new(&scope.pp("sca"), wide / 2)?,
            project1: Pointwise::new(&scope.pp("project1"), wide / 2, channels)?,
            norm2: LayerNorm2d::new(&scope.pp("norm2"), channels)?,
            expand2: Pointwise::new(&scope.pp("expand2"), channels, wide)?,
            project2: Pointwise::new(&scope.pp("project2"), wide / 2, channels)?,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.norm1.forward(x)?;
        let t = self.dw.forward(&self.expand1.forward(&t)?)?;
        let t = self.sca.forward(&simple_gate(&t)?)?;
        let y = (x + self.project1.forward(&t)?)?;

        let t = self.expand2.forward(&self.norm2.forward(&y)?)?;
        let t = self.project2.forward(&simple_gate(&t)?)?;
        Ok((y + t)?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.expand1.macs(h, w)
            + self.dw.macs(h, w)
            + self.sca.macs()
            + self.project1.macs(h, w)
            + self.expand2.macs(h, w)
            + self.project2.macs(h, w)
    }
}
