//! Channel-wise ("transposed") self-attention with top-k sparsification.
//!
//! Attention is computed between channels: for each head the `d_h × d_h`
//! score matrix is `q̂ k̂ᵀ · τ`, where `q̂`, `k̂` are L2-normalised over the
//! `H·W` token axis and `τ` is a learnable per-head temperature. Each sparse
//! branch keeps only the `k_i` largest scores of every row before the softmax;
//! branch outputs are averaged.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{softmax_last_dim, Depthwise3x3, Pointwise};
use super::params::{live, Init, Scope};
use crate::error::{Error, Result};

/// Top-k keep rates, one per branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKConfig {
    pub rates: Vec<f64>,
}

impl Default for TopKConfig {
    fn default() -> Self {
        Self {
            rates: vec![1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0, 4.0 / 5.0],
        }
    }
}

impl TopKConfig {
    pub fn dense() -> Self {
        Self { rates: vec![1.0] }
    }

    pub fn branches(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::Config("top-k config needs at least one rate".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::Config(format!("top-k rate {r} outside (0, 1]")));
        }
        Ok(())
    }

    /// Kept count per branch: `⌈rate · d_h⌉`, at least 1.
    pub fn kept_counts(&self, head_dim: usize) -> Vec<usize> {
        self.rates
            .iter()
            .map(|r| {
                // Guard against 0.5·4 = 2.0000000000000004 style round-up.
                let exact = r * head_dim as f64;
                let k = if (exact - exact.round()).abs() < 1e-9 {
                    exact.round() as usize
                } else {
                    exact.ceil() as usize
                };
                k.clamp(1, head_dim)
            })
            .collect()
    }
}

/// What pruned scores are replaced with before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    /// Pruned entries receive exactly zero attention weight.
    #[default]
    NegInf,
    /// Literal zero score; pruned entries still receive softmax mass.
    Zero,
}

/// Direction along which the top-k selection runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectAxis {
    /// Each output channel keeps its `k` strongest input channels.
    #[default]
    Row,
    Column,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseOptions {
    #[serde(default)]
    pub fill: MaskFill,
    #[serde(default)]
    pub axis: SelectAxis,
}

/// Marks the `keep` largest entries of a row. Ties go to the lower index.
pub fn topk_row_mask(row: &[f64], keep: usize, out: &mut [u8]) {
    let n = row.len();
    out.iter_mut().for_each(|m| *m = 0);
    if keep >= n {
        out.iter_mut().for_each(|m| *m = 1);
        return;
    }
    if keep == 0 {
        return;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let order = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    idx.select_nth_unstable_by(keep - 1, order);
    for &i in &idx[..keep] {
        out[i] = 1;
    }
}

/// Keep-mask for a batch of score matrices `(.., r, d)`. Column selection
/// needs square matrices.
pub fn topk_mask(scores: &Tensor, keep: usize, axis: SelectAxis) -> Result<Tensor> {
    let dims = scores.dims().to_vec();
    let d = *dims.last().ok_or_else(|| Error::Shape("empty score tensor".into()))?;
    if dims.len() < 2 || (axis == SelectAxis::Column && dims[dims.len() - 2] != d) {
        return Err(Error::Shape(format!("column selection needs square scores, got {dims:?}")));
    }
    let source = match axis {
        SelectAxis::Row => scores.detach(),
        SelectAxis::Column => scores.detach().transpose(dims.len() - 2, dims.len() - 1)?,
    };
    let values = source.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let mut mask = vec![0u8; values.len()];
    for (row, out) in values.chunks_exact(d).zip(mask.chunks_exact_mut(d)) {
        topk_row_mask(row, keep, out);
    }
    let mask = Tensor::from_vec(mask, dims.as_slice(), scores.device())?;
    Ok(match axis {
        SelectAxis::Row => mask,
        SelectAxis::Column => mask.transpose(dims.len() - 2, dims.len() - 1)?.contiguous()?,
    })
}

/// Softmax over the last dim after keeping only the top-`keep` scores.
pub fn masked_softmax(scores: &Tensor, keep: usize, opts: SparseOptions) -> Result<Tensor> {
    let d = scores.dim(candle_core::D::Minus1)?;
    if keep == 0 || keep > d {
        return Err(Error::Invalid(format!("kept count {keep} outside 1..={d}")));
    }
    if keep == d {
        return softmax_last_dim(scores);
    }
    let mask = topk_mask(scores, keep, opts.axis)?;
    let fill = match opts.fill {
        MaskFill::NegInf => f64::NEG_INFINITY,
        MaskFill::Zero => 0.0,
    };
    let filler = Tensor::full(fill, scores.shape(), scores.device())?.to_dtype(scores.dtype())?;
    softmax_last_dim(&mask.where_cond(scores, &filler)?)
}

/// Transposed attention scores `normalize(q) · normalize(k)ᵀ · temperature`.
///
/// `q`, `k`: `(B, heads, d_h, HW)`; `temperature`: `(heads)`.
pub fn attention_scores(q: &Tensor, k: &Tensor, temperature: &Tensor) -> Result<Tensor> {
    let heads = q.dim(1)?;
    let qn = l2_normalize_last(q)?;
    let kn = l2_normalize_last(k)?;
    let scores = qn.matmul(&kn.t()?)?;
    Ok(scores.broadcast_mul(&temperature.reshape((1, heads, 1, 1))?)?)
}

fn l2_normalize_last(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(candle_core::D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// One sparse branch: `softmax(S_k(scores)) · v`.
pub fn sparse_attention_branch(
    scores: &Tensor,
    v: &Tensor,
    keep: usize,
    opts: SparseOptions,
) -> Result<Tensor> {
    Ok(masked_softmax(scores, keep, opts)?.matmul(v)?)
}

/// Sparse attention from raw per-head token matrices.
pub fn sparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    keep: usize,
    temperature: &Tensor,
    opts: SparseOptions,
) -> Result<Tensor> {
    let scores = attention_scores(q, k, temperature)?;
    sparse_attention_branch(&scores, v, keep, opts)
}

/// Averages the branches `(1/K) Σ_i softmax(S_{k_i}(scores)) · v`.
///
/// Branches with equal kept counts produce identical outputs, so each
/// distinct count is evaluated once and weighted by its multiplicity.
pub fn multi_branch_attention(
    scores: &Tensor,
    v: &Tensor,
    kept: &[usize],
    opts: SparseOptions,
) -> Result<Tensor> {
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    for &k in kept {
        *groups.entry(k).or_default() += 1;
    }
    let total = kept.len() as f64;
    let mut out: Option<Tensor> = None;
    for (&k, &count) in &groups {
        let branch = sparse_attention_branch(scores, v, k, opts)?;
        let branch = if count as f64 == total {
            branch
        } else {
            (branch * (count as f64 / total))?
        };
        out = Some(match out {
            None => branch,
            Some(acc) => (acc + branch)?,
        });
    }
    out.ok_or_else(|| Error::Config("no attention branches".into()))
}

/// Sparse self-attention layer. With all rates equal to 1 it is the dense
/// multi-dconv-head transposed attention.
#[derive(Clone, Debug)]
pub struct SparseSelfAttention {
    qkv: Pointwise,
    qkv_dw: Depthwise3x3,
    temperature: Tensor,
    proj: Pointwise,
    channels: usize,
    heads: usize,
    kept: Vec<usize>,
    opts: SparseOptions,
}

impl SparseSelfAttention {
    pub fn new(
        scope: &Scope,
        channels: usize,
        heads: usize,
        topk: &TopKConfig,
        opts: SparseOptions,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels not divisible by {heads} heads"
            )));
        }
        topk.validate()?;
        Ok(Self {
            qkv: Pointwise::new(&scope.pp("qkv"), channels, 3 * channels)?,
            qkv_dw: Depthwise3x3::new(&scope.pp("qkv_dw"), 3 * channels)?,
            temperature: scope.var("temperature", heads, Init::Const(1.0))?,
            proj: Pointwise::new(&scope.pp("proj"), channels, channels)?,
            channels,
            heads,
            kept: topk.kept_counts(channels / heads),
            opts,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn kept_counts(&self) -> &[usize] {
        &self.kept
    }

    /// Splits `(B, 3C, H, W)` into per-head `(B, heads, d_h, HW)` q, k, v.
    pub fn qkv(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!(
                "attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let qkv = self.qkv_dw.forward(&self.qkv.forward(x)?)?;
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(1, i * c, c)?
                .reshape((b, self.heads, self.head_dim(), h * w))?)
        };
        Ok((split(0)?, split(1)?, split(2)?))
    }

    pub fn temperature(&self) -> &Tensor {
        &self.temperature
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (q, k, v) = self.qkv(x)?;
        let scores = attention_scores(&q, &k, &live(&self.temperature))?;
        let out = multi_branch_attention(&scores, &v, &self.kept, self.opts)?;
        self.proj.forward(&out.reshape((b, c, h, w))?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let d = self.head_dim();
        // One score product plus one value product per branch.
        let attn = (self.heads * d * d * h * w) as u64 * (1 + self.kept.len() as u64);
        self.qkv.macs(h, w) + self.qkv_dw.macs(h, w) + attn + self.proj.macs(h, w)
    }
}
