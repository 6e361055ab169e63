//! Neural building blocks shared by both decoders.

mod attention;
mod layers;
mod naf;
mod params;
mod stb;

pub use attention::{
    attention_scores, masked_softmax, multi_branch_attention, sparse_attention,
    sparse_attention_branch, topk_mask, topk_row_mask, MaskFill, SelectAxis, SparseOptions,
    SparseSelfAttention, TopKConfig,
};
pub use layers::{
    gelu, layer_norm_channel, pixel_shuffle2, sigmoid, softmax_last_dim, Conv3x3, Depthwise3x3,
    Downsample, LayerNorm2d, Pointwise, Upsample, LAYER_NORM_EPS,
};
pub use naf::{simple_gate, NafBlock, SimplifiedChannelAttention, NAF_EXPANSION};
pub use params::{grad_enabled, no_grad, Init, ParamStore, Scope};
pub use stb::{GatedFeedForward, SparseTransformerBlock};
