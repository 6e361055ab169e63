use serde::{Deserialize, Serialize};

use crate::blocks::{MaskFill, SelectAxis, SparseOptions, TopKConfig};
use crate::error::{Error, Result};

/// Architecture variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared encoder, both decoders, gated fusion.
    #[default]
    Full,
    /// Shared encoder and the noise-removal decoder only.
    SeNrdOnly,
    /// Shared encoder and the watermark-and-noise decoder only.
    SeWnrdOnly,
    /// Both decoders without the fusion unit; the final output comes from
    /// the watermark-and-noise decoder.
    DualNoFfu,
    /// Full model with dense attention in every transformer block.
    DenseMdta,
    /// Full model with a separate encoder per decoder.
    DualEncoders,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SeNrdOnly,
        Variant::SeWnrdOnly,
        Variant::DualNoFfu,
        Variant::Full,
        Variant::DenseMdta,
        Variant::DualEncoders,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SeNrdOnly => "se_nrd_only",
            Variant::SeWnrdOnly => "se_wnrd_only",
            Variant::DualNoFfu => "dual_no_ffu",
            Variant::DenseMdta => "dense_mdta",
            Variant::DualEncoders => "dual_encoders",
        }
    }

    pub fn has_nrd(self) -> bool {
        self != Variant::SeWnrdOnly
    }

    pub fn has_wnrd(self) -> bool {
        self != Variant::SeNrdOnly
    }

    pub fn has_ffu(self) -> bool {
        matches!(self, Variant::Full | Variant::DenseMdta | Variant::DualEncoders)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every architectural hyperparameter.
///
/// `level_depths` are `(L1, .., L5)`: L1 and L2 set the block count of the
/// full- and half-resolution convolutional stages (encoder and both conv
/// decoders), L3..L5 the transformer stages at 1/4, 1/8 and 1/16 scale,
/// mirrored on the decoding side. `heads` lists the five transformer stages
/// in order (encoder /4, encoder /8, bottleneck, decoder /8, decoder /4).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_width: usize,
    pub level_depths: [usize; 5],
    pub heads: [usize; 5],
    pub topk: TopKConfig,
    pub ffn_expansion: f64,
    pub variant: Variant,
    /// Blocks at the 1/4-scale bottleneck of the noise-removal decoder.
    pub nrd_bottleneck: usize,
    /// Overrides `(L1, L2)` for the noise-removal decoder.
    pub nrd_depths: Option<[usize; 2]>,
    /// Overrides `(L1, L2)` for the conv tail of the watermark-and-noise decoder.
    pub wnrd_conv_depths: Option<[usize; 2]>,
    pub mask_fill: MaskFill,
    pub select_axis: SelectAxis,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 48,
            level_depths: [2, 4, 4, 6, 6],
            heads: [4, 8, 8, 8, 4],
            topk: TopKConfig::default(),
            ffn_expansion: 2.66,
            variant: Variant::Full,
            nrd_bottleneck: 2,
            nrd_depths: None,
            wnrd_conv_depths: None,
            mask_fill: MaskFill::NegInf,
            select_axis: SelectAxis::Row,
        }
    }
}

impl ModelConfig {
    /// A narrow, shallow configuration for fast experiments.
    pub fn desk() -> Self {
        Self {
            base_width: 16,
            level_depths: [1, 1, 1, 1, 1],
            heads: [1, 2, 2, 2, 1],
            nrd_bottleneck: 1,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Attention rates after applying the variant.
    pub fn effective_topk(&self) -> TopKConfig {
        match self.variant {
            Variant::DenseMdta => TopKConfig::dense(),
            _ => self.topk.clone(),
        }
    }

    pub fn sparse_options(&self) -> SparseOptions {
        SparseOptions {
            fill: self.mask_fill,
            axis: self.select_axis,
        }
    }

    /// Channel width of the transformer stages at 1/4, 1/8, 1/16 scale.
    pub fn st_widths(&self) -> [usize; 3] {
        let c = self.base_width;
        [c, 2 * c, 4 * c]
    }

    pub fn nrd_conv_depths(&self) -> [usize; 2] {
        self.nrd_depths.unwrap_or([self.level_depths[0], self.level_depths[1]])
    }

    pub fn wnrd_tail_depths(&self) -> [usize; 2] {
        self.wnrd_conv_depths.unwrap_or([self.level_depths[0], self.level_depths[1]])
    }

    /// Spatial sizes must be multiples of this.
    pub const DIVISOR: usize = 16;

    /// Collects every violation at once.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let c = self.base_width;
        if c == 0 || c % 2 != 0 {
            p.push(format!("base_width {c} must be positive and even"));
        }
        for (i, d) in self.level_depths.iter().enumerate() {
            if *d == 0 {
                p.push(format!("level depth L{} must be at least 1", i + 1));
            }
        }
        for (name, depths) in [("nrd_depths", self.nrd_depths), ("wnrd_conv_depths", self.wnrd_conv_depths)] {
            if depths.is_some_and(|d| d.contains(&0)) {
                p.push(format!("{name} entries must be at least 1"));
            }
        }
        if self.nrd_bottleneck == 0 {
            p.push("nrd_bottleneck must be at least 1".into());
        }
        let w = self.st_widths();
        let stage_width = [w[0], w[1], w[2], w[1], w[0]];
        for (i, (&h, &sw)) in self.heads.iter().zip(&stage_width).enumerate() {
            if h == 0 || sw % h != 0 {
                p.push(format!("transformer stage {} width {sw} not divisible by {h} heads", i + 1));
            }
        }
        if let Err(e) = self.topk.validate() {
            p.push(e.to_string());
        }
        if !(self.ffn_expansion > 0.0) || (self.ffn_expansion * c as f64).floor() < 1.0 {
            p.push(format!("ffn_expansion {} gives an empty hidden layer", self.ffn_expansion));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
