use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use super::config::{ModelConfig, Variant};
use crate::blocks::{
    gelu, no_grad, sigmoid, Conv3x3, Downsample, NafBlock, ParamStore, Pointwise, Scope, SparseTransformerBlock, Upsample,
};
use crate::error::{Error, Result};

/// Outputs of one forward pass, all `(B, 3, H, W)` except the gate.
///
/// Branches absent from a variant are `None`. `y_hat` always carries the
/// global input residual.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub y_n: Option<Tensor>,
    pub y_wn: Option<Tensor>,
    pub y_hat: Tensor,
    /// `(B, C, H, W)` fusion gate in `(0, 1)`.
    pub gate: Option<Tensor>,
}

/// Cost of one named component at a given input resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub params: usize,
    pub macs: u64,
    /// `(channels, height, width)` of the component's output.
    pub output: (usize, usize, usize),
    pub blocks: usize,
    pub heads: Option<usize>,
}

fn naf_stack(scope: &Scope, n: usize, channels: usize) -> Result<Vec<NafBlock>> {
    (0..n).map(|i| NafBlock::new(&scope.pp(i.to_string()), channels)).collect()
}

fn run_naf(blocks: &[NafBlock], x: Tensor) -> Result<Tensor> {
    blocks.iter().try_fold(x, |x, b| b.forward(&x))
}

fn run_stb(blocks: &[SparseTransformerBlock], x: Tensor) -> Result<Tensor> {
    blocks.iter().try_fold(x, |x, b| b.forward(&x))
}

fn naf_macs(blocks: &[NafBlock], h: usize, w: usize) -> u64 {
    blocks.iter().map(|b| b.macs(h, w)).sum()
}

fn stb_macs(blocks: &[SparseTransformerBlock], h: usize, w: usize) -> u64 {
    blocks.iter().map(|b| b.macs(h, w)).sum()
}

/// Channel concatenation followed by a 1×1 projection back to `channels`.
#[derive(Clone, Debug)]
struct SkipFuse {
    proj: Pointwise,
}

impl SkipFuse {
    fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self { proj: Pointwise::new(scope, 2 * channels, channels)? })
    }

    fn forward(&self, up: &Tensor, skip: &Tensor) -> Result<Tensor> {
        self.proj.forward(&Tensor::cat(&[up, skip], 1)?)
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.proj.macs(h, w)
    }
}

struct EncoderFeatures {
    full: Tensor,
    half: Tensor,
    quarter: Tensor,
}

struct Encoder {
    prefix: String,
    stem: Conv3x3,
    stage1: Vec<NafBlock>,
    down1: Downsample,
    stage2: Vec<NafBlock>,
    down2: Downsample,
}

impl Encoder {
    fn new(scope: &Scope, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.base_width;
        Ok(Self {
            prefix: scope.prefix().to_string(),
            stem: Conv3x3::new(&scope.pp("stem"), 3, c, 1)?,
            stage1: naf_stack(&scope.pp("stage1"), cfg.level_depths[0], c)?,
            down1: Downsample::new(&scope.pp("down1"), c, c)?,
            stage2: naf_stack(&scope.pp("stage2"), cfg.level_depths[1], c)?,
            down2: Downsample::new(&scope.pp("down2"), c, c)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<EncoderFeatures> {
        let full = run_naf(&self.stage1, self.stem.forward(x)?)?;
        let half = run_naf(&self.stage2, self.down1.forward(&full)?)?;
        let quarter = self.down2.forward(&half)?;
        Ok(EncoderFeatures { full, half, quarter })
    }

    fn costs(&self, c: usize, h: usize, w: usize, out: &mut Vec<LayerCost>) {
        let p = &self.prefix;
        out.push(cost(format!("{p}.stem"), self.stem.macs(h, w), (c, h, w), 1, None));
        out.push(cost(format!("{p}.stage1"), naf_macs(&self.stage1, h, w), (c, h, w), self.stage1.len(), None));
        out.push(cost(format!("{p}.down1"), self.down1.macs(h, w), (c, h / 2, w / 2), 1, None));
        out.push(cost(format!("{p}.stage2"), naf_macs(&self.stage2, h / 2, w / 2), (c, h / 2, w / 2), self.stage2.len(), None));
        out.push(cost(format!("{p}.down2"), self.down2.macs(h / 2, w / 2), (c, h / 4, w / 4), 1, None));
    }
}

fn cost(name: String, macs: u64, output: (usize, usize, usize), blocks: usize, heads: Option<usize>) -> LayerCost {
    LayerCost { name, params: 0, macs, output, blocks, heads }
}

/// Two upsampling stages from 1/4 scale back to full resolution with
/// encoder skips.
struct ConvDecoder {
    prefix: String,
    up2: Upsample,
    fuse2: SkipFuse,
    stage2: Vec<NafBlock>,
    up1: Upsample,
    fuse1: SkipFuse,
    stage1: Vec<NafBlock>,
}

impl ConvDecoder {
    fn new(scope: &Scope, c: usize, depths: [usize; 2]) -> Result<Self> {
        Ok(Self {
            prefix: scope.prefix().to_string(),
            up2: Upsample::new(&scope.pp("up2"), c, c)?,
            fuse2: SkipFuse::new(&scope.pp("fuse2"), c)?,
            stage2: naf_stack(&scope.pp("stage2"), depths[1], c)?,
            up1: Upsample::new(&scope.pp("up1"), c, c)?,
            fuse1: SkipFuse::new(&scope.pp("fuse1"), c)?,
            stage1: naf_stack(&scope.pp("stage1"), depths[0], c)?,
        })
    }

    fn forward(&self, x: &Tensor, enc: &EncoderFeatures) -> Result<Tensor> {
        let t = self.fuse2.forward(&self.up2.forward(x)?, &enc.half)?;
        let t = run_naf(&self.stage2, t)?;
        let t = self.fuse1.forward(&self.up1.forward(&t)?, &enc.full)?;
        run_naf(&self.stage1, t)
    }

    fn costs(&self, c: usize, h: usize, w: usize, out: &mut Vec<LayerCost>) {
        let p = &self.prefix;
        let (h2, w2, h4, w4) = (h / 2, w / 2, h / 4, w / 4);
        out.push(cost(format!("{p}.up2"), self.up2.macs(h4, w4) + self.fuse2.macs(h2, w2), (c, h2, w2), 1, None));
        out.push(cost(format!("{p}.stage2"), naf_macs(&self.stage2, h2, w2), (c, h2, w2), self.stage2.len(), None));
        out.push(cost(format!("{p}.up1"), self.up1.macs(h2, w2) + self.fuse1.macs(h, w), (c, h, w), 1, None));
        out.push(cost(format!("{p}.stage1"), naf_macs(&self.stage1, h, w), (c, h, w), self.stage1.len(), None));
    }
}

struct NoiseDecoder {
    prefix: String,
    bottleneck: Vec<NafBlock>,
    conv: ConvDecoder,
}

impl NoiseDecoder {
    fn new(scope: &Scope, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.base_width;
        Ok(Self {
            prefix: scope.prefix().to_string(),
            bottleneck: naf_stack(&scope.pp("bottleneck"), cfg.nrd_bottleneck, c)?,
            conv: ConvDecoder::new(&scope.pp("conv"), c, cfg.nrd_conv_depths())?,
        })
    }

    fn forward(&self, enc: &EncoderFeatures) -> Result<Tensor> {
        let t = run_naf(&self.bottleneck, enc.quarter.clone())?;
        self.conv.forward(&t, enc)
    }

    fn costs(&self, c: usize, h: usize, w: usize, out: &mut Vec<LayerCost>) {
        let p = &self.prefix;
        out.push(cost(
            format!("{p}.bottleneck"),
            naf_macs(&self.bottleneck, h / 4, w / 4),
            (c, h / 4, w / 4),
            self.bottleneck.len(),
            None,
        ));
        self.conv.costs(c, h, w, out);
    }
}

/// Transformer U-Net over 1/4, 1/8 and 1/16 scales.
struct TransformerUnet {
    prefix: String,
    widths: [usize; 3],
    heads: [usize; 5],
    enc1: Vec<SparseTransformerBlock>,
    down1: Downsample,
    enc2: Vec<SparseTransformerBlock>,
    down2: Downsample,
    bottleneck: Vec<SparseTransformerBlock>,
    up2: Upsample,
    fuse2: SkipFuse,
    dec2: Vec<SparseTransformerBlock>,
    up1: Upsample,
    fuse1: SkipFuse,
    dec1: Vec<SparseTransformerBlock>,
}

impl TransformerUnet {
    fn new(scope: &Scope, cfg: &ModelConfig) -> Result<Self> {
        let [w1, w2, w3] = cfg.st_widths();
        let [_, _, l3, l4, l5] = cfg.level_depths;
        let topk = cfg.effective_topk();
        let opts = cfg.sparse_options();
        let stack = |name: &str, n: usize, c: usize, heads: usize| -> Result<Vec<SparseTransformerBlock>> {
            let s = scope.pp(name);
            (0..n)
                .map(|i| SparseTransformerBlock::new(&s.pp(i.to_string()), c, heads, &topk, cfg.ffn_expansion, opts))
                .collect()
        };
        let h = cfg.heads;
        Ok(Self {
            prefix: scope.prefix().to_string(),
            widths: [w1, w2, w3],
            heads: h,
            enc1: stack("enc1", l3, w1, h[0])?,
            down1: Downsample::new(&scope.pp("down1"), w1, w2)?,
            enc2: stack("enc2", l4, w2, h[1])?,
            down2: Downsample::new(&scope.pp("down2"), w2, w3)?,
            bottleneck: stack("bottleneck", l5, w3, h[2])?,
            up2: Upsample::new(&scope.pp("up2"), w3, w2)?,
            fuse2: SkipFuse::new(&scope.pp("fuse2"), w2)?,
            dec2: stack("dec2", l4, w2, h[3])?,
            up1: Upsample::new(&scope.pp("up1"), w2, w1)?,
            fuse1: SkipFuse::new(&scope.pp("fuse1"), w1)?,
            dec1: stack("dec1", l3, w1, h[4])?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let e1 = run_stb(&self.enc1, x.clone())?;
        let e2 = run_stb(&self.enc2, self.down1.forward(&e1)?)?;
        let b = run_stb(&self.bottleneck, self.down2.forward(&e2)?)?;
        let d2 = run_stb(&self.dec2, self.fuse2.forward(&self.up2.forward(&b)?, &e2)?)?;
        run_stb(&self.dec1, self.fuse1.forward(&self.up1.forward(&d2)?, &e1)?)
    }

    /// `h`, `w` are the full input resolution.
    fn costs(&self, h: usize, w: usize, out: &mut Vec<LayerCost>) {
        let p = &self.prefix;
        let [w1, w2, w3] = self.widths;
        let (h4, w4, h8, w8, h16, w16) = (h / 4, w / 4, h / 8, w / 8, h / 16, w / 16);
        let hd = &self.heads;
        out.push(cost(format!("{p}.enc1"), stb_macs(&self.enc1, h4, w4), (w1, h4, w4), self.enc1.len(), Some(hd[0])));
        out.push(cost(format!("{p}.down1"), self.down1.macs(h4, w4), (w2, h8, w8), 1, None));
        out.push(cost(format!("{p}.enc2"), stb_macs(&self.enc2, h8, w8), (w2, h8, w8), self.enc2.len(), Some(hd[1])));
        out.push(cost(format!("{p}.down2"), self.down2.macs(h8, w8), (w3, h16, w16), 1, None));
        out.push(cost(
            format!("{p}.bottleneck"),
            stb_macs(&self.bottleneck, h16, w16),
            (w3, h16, w16),
            self.bottleneck.len(),
            Some(hd[2]),
        ));
        out.push(cost(format!("{p}.up2"), self.up2.macs(h16, w16) + self.fuse2.macs(h8, w8), (w2, h8, w8), 1, None));
        out.push(cost(format!("{p}.dec2"), stb_macs(&self.dec2, h8, w8), (w2, h8, w8), self.dec2.len(), Some(hd[3])));
        out.push(cost(format!("{p}.up1"), self.up1.macs(h8, w8) + self.fuse1.macs(h4, w4), (w1, h4, w4), 1, None));
        out.push(cost(format!("{p}.dec1"), stb_macs(&self.dec1, h4, w4), (w1, h4, w4), self.dec1.len(), Some(hd[4])));
    }
}

struct WatermarkDecoder {
    st: TransformerUnet,
    conv: ConvDecoder,
}

impl WatermarkDecoder {
    fn new(scope: &Scope, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            st: TransformerUnet::new(&scope.pp("st"), cfg)?,
            conv: ConvDecoder::new(&scope.pp("conv"), cfg.base_width, cfg.wnrd_tail_depths())?,
        })
    }

    fn forward(&self, enc: &EncoderFeatures) -> Result<Tensor> {
        let t = self.st.forward(&enc.quarter)?;
        self.conv.forward(&t, enc)
    }
}

/// Gated fusion: `NAFBlock(F_wn + sigmoid(pw(gelu(pw(F_wn)))) ⊙ F_n)`.
pub struct FusionUnit {
    gate1: Pointwise,
    gate2: Pointwise,
    fuse: NafBlock,
}

impl FusionUnit {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gate1: Pointwise::new(&scope.pp("gate1"), channels, channels)?,
            gate2: Pointwise::new(&scope.pp("gate2"), channels, channels)?,
            fuse: NafBlock::new(&scope.pp("fuse"), channels)?,
        })
    }

    pub fn gate(&self, f_wn: &Tensor) -> Result<Tensor> {
        sigmoid(&self.gate2.forward(&gelu(&self.gate1.forward(f_wn)?)?)?)
    }

    /// Returns `(F_fuse, gate)`.
    pub fn forward(&self, f_n: &Tensor, f_wn: &Tensor) -> Result<(Tensor, Tensor)> {
        let gate = self.gate(f_wn)?;
        let fused = self.fuse.forward(&(f_wn + gate.mul(f_n)?)?)?;
        Ok((fused, gate))
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.gate1.macs(h, w) + self.gate2.macs(h, w) + self.fuse.macs(h, w)
    }
}

/// The assembled restoration network.
pub struct SshNet {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    encoder_b: Option<Encoder>,
    nrd: Option<NoiseDecoder>,
    wnrd: Option<WatermarkDecoder>,
    ffu: Option<FusionUnit>,
    head_n: Option<Conv3x3>,
    head_wn: Option<Conv3x3>,
    head_out: Conv3x3,
}

impl SshNet {
    /// Builds every parameter on `device`. Initial values depend only on `seed`.
    pub fn new(cfg: &ModelConfig, device: &Device, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(device.clone(), dtype, seed);
        let root = store.root();
        let v = cfg.variant;
        let c = cfg.base_width;
        let encoder = Encoder::new(&root.pp("encoder"), cfg)?;
        let encoder_b = if v == Variant::DualEncoders {
            Some(Encoder::new(&root.pp("encoder_b"), cfg)?)
        } else {
            None
        };
        let nrd = v.has_nrd().then(|| NoiseDecoder::new(&root.pp("nrd"), cfg)).transpose()?;
        let wnrd = v.has_wnrd().then(|| WatermarkDecoder::new(&root.pp("wnrd"), cfg)).transpose()?;
        let ffu = v.has_ffu().then(|| FusionUnit::new(&root.pp("ffu"), c)).transpose()?;
        let dual = v.has_nrd() && v.has_wnrd();
        let head_n = dual.then(|| Conv3x3::new(&root.pp("head_n"), c, 3, 1)).transpose()?;
        let head_wn = v.has_ffu().then(|| Conv3x3::new(&root.pp("head_wn"), c, 3, 1)).transpose()?;
        let head_out = Conv3x3::new(&root.pp("head_out"), c, 3, 1)?;
        Ok(Self { cfg: cfg.clone(), store, encoder, encoder_b, nrd, wnrd, ffu, head_n, head_wn, head_out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Exact number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.store.num_elements()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let d = ModelConfig::DIVISOR;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a positive multiple of {d} in both dimensions; reflect-pad first (see infer_tiled)"
            )));
        }
        Ok(())
    }

    /// `x` is `(B, 3, H, W)` with `H`, `W` multiples of 16.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutputs> {
        self.check_input(x)?;
        let enc = self.encoder.forward(x)?;
        let enc_b = self.encoder_b.as_ref().map(|e| e.forward(x)).transpose()?;
        let f_n = self.nrd.as_ref().map(|d| d.forward(&enc)).transpose()?;
        let f_wn = self.wnrd.as_ref().map(|d| d.forward(enc_b.as_ref().unwrap_or(&enc))).transpose()?;
        let head = |conv: &Option<Conv3x3>, f: &Option<Tensor>| -> Result<Option<Tensor>> {
            match (conv, f) {
                (Some(c), Some(f)) => Ok(Some(c.forward(f)?)),
                _ => Ok(None),
            }
        };
        let y_n = head(&self.head_n, &f_n)?;
        let y_wn = head(&self.head_wn, &f_wn)?;
        let (last, gate) = match (&self.ffu, &f_n, &f_wn) {
            (Some(ffu), Some(n), Some(wn)) => {
                let (fused, gate) = ffu.forward(n, wn)?;
                (fused, Some(gate))
            }
            (None, _, Some(wn)) => (wn.clone(), None),
            (None, Some(n), None) => (n.clone(), None),
            _ => return Err(Error::Config("variant produced no decoder output".into())),
        };
        let y_hat = (self.head_out.forward(&last)? + x)?;
        Ok(ForwardOutputs { y_n, y_wn, y_hat, gate })
    }

    /// [`forward`](Self::forward) without an autograd graph; use for inference.
    pub fn predict(&self, x: &Tensor) -> Result<ForwardOutputs> {
        no_grad(|| self.forward(&x.detach()))
    }

    pub fn fusion(&self) -> Option<&FusionUnit> {
        self.ffu.as_ref()
    }

    /// Per-component parameter and multiply-accumulate costs at `h`×`w`.
    pub fn cost_breakdown(&self, h: usize, w: usize) -> Vec<LayerCost> {
        let c = self.cfg.base_width;
        let mut out = Vec::new();
        self.encoder.costs(c, h, w, &mut out);
        if let Some(e) = &self.encoder_b {
            e.costs(c, h, w, &mut out);
        }
        if let Some(d) = &self.nrd {
            d.costs(c, h, w, &mut out);
        }
        if let Some(d) = &self.wnrd {
            d.st.costs(h, w, &mut out);
            d.conv.costs(c, h, w, &mut out);
        }
        if let Some(f) = &self.ffu {
            out.push(cost("ffu".into(), f.macs(h, w), (c, h, w), 1, None));
        }
        for (name, conv) in [("head_n", &self.head_n), ("head_wn", &self.head_wn)] {
            if let Some(conv) = conv {
                out.push(cost(name.into(), conv.macs(h, w), (3, h, w), 1, None));
            }
        }
        out.push(cost("head_out".into(), self.head_out.macs(h, w), (3, h, w), 1, None));

        let vars = self.store.vars();
        for entry in &mut out {
            // Upsampling entries also own the skip projection that follows them.
            let mut prefixes = vec![format!("{}.", entry.name)];
            for (up, fuse) in [("up1", "fuse1"), ("up2", "fuse2")] {
                if let Some(stem) = entry.name.strip_suffix(up) {
                    prefixes.push(format!("{stem}{fuse}."));
                }
            }
            entry.params = vars
                .iter()
                .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
                .map(|(_, v)| v.elem_count())
                .sum();
        }
        out
    }

    /// Total multiply-accumulates of convolutions and attention products.
    pub fn count_macs(&self, h: usize, w: usize) -> u64 {
        self.cost_breakdown(h, w).iter().map(|c| c.macs).sum()
    }

    /// Floating-point operations counted as two per multiply-accumulate.
    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        2 * self.count_macs(h, w)
    }
}
