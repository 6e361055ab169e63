use candle_core::Tensor;

use super::attention::{SparseOptions, SparseSelfAttention, TopKConfig};
use super::layers::{gelu, Depthwise3x3, LayerNorm2d, Pointwise};
use super::params::Scope;
use crate::error::Result;

/// Gated depthwise feed-forward network.
///
/// Two parallel 1×1 expansions to `⌊expansion·C⌋` (computed as one conv),
/// a 3×3 depthwise conv, a GELU-gated product and a 1×1 projection.
#[derive(Clone, Debug)]
pub struct GatedFeedForward {
    project_in: Pointwise,
    dw: Depthwise3x3,
    project_out: Pointwise,
    hidden: usize,
}

impl GatedFeedForward {
    pub fn new(scope: &Scope, channels: usize, expansion: f64) -> Result<Self> {
        let hidden = ((channels as f64 * expansion).floor() as usize).max(1);
        Ok(Self {
            project_in: Pointwise::new(&scope.pp("project_in"), channels, hidden * 2)?,
            dw: Depthwise3x3::new(&scope.pp("dw"), hidden * 2)?,
            project_out: Pointwise::new(&scope.pp("project_out"), hidden, channels)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.dw.forward(&self.project_in.forward(x)?)?;
        let gate = gelu(&t.narrow(1, 0, self.hidden)?)?;
        let value = t.narrow(1, self.hidden, self.hidden)?;
        self.project_out.forward(&(gate * value)?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.project_in.macs(h, w) + self.dw.macs(h, w) + self.project_out.macs(h, w)
    }
}

/// Sparse Transformer block: `y = x + SSA(LN(x))`, `out = y + FFN(LN(y))`.
#[derive(Clone, Debug)]
pub struct SparseTransformerBlock {
    norm1: LayerNorm2d,
    attn: SparseSelfAttention,
    norm2: LayerNorm2d,
    ffn: GatedFeedForward,
}

impl SparseTransformerBlock {
    pub fn new(
        scope: &Scope,
        channels: usize,
        heads: usize,
        topk: &TopKConfig,
        ffn_expansion: f64,
        opts: SparseOptions,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm2d::new(&scope.pp("norm1"), channels)?,
            attn: SparseSelfAttention::new(&scope.pp("attn"), channels, heads, topk, opts)?,
            norm2: LayerNorm2d::new(&scope.pp("norm2"), channels)?,
            ffn: GatedFeedForward::new(&scope.pp("ffn"), channels, ffn_expansion)?,
        })
    }

    pub fn attention(&self) -> &SparseSelfAttention {
        &self.attn
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        Ok((&y + self.ffn.forward(&self.norm2.forward(&y)?)?)?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.attn.macs(h, w) + self.ffn.macs(h, w)
    }
}
