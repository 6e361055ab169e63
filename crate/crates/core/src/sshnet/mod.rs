//! The dual-decoder restoration network, its ablation variants, tiled
//! inference, gate visualisation and complexity accounting.

mod config;
mod infer;
mod model;

pub use config::{ModelConfig, Variant};
pub use infer::{
    colormap, describe, extract_gate_maps, infer_branches, infer_tiled, montage, BranchImages, GateMap, ModelReport,
};
pub use model::{ForwardOutputs, FusionUnit, LayerCost, SshNet};
