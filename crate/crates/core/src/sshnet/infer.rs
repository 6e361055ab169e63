use candle_core::Tensor;
use serde::Serialize;

use super::config::ModelConfig;
use super::model::{LayerCost, SshNet};
use crate::error::{Error, Result};
use crate::imgcore::Image;

fn padded(n: usize) -> usize {
    n.div_ceil(ModelConfig::DIVISOR) * ModelConfig::DIVISOR
}

/// Restores an image of any size: reflect-pads to a multiple of 16, runs
/// the network, crops back and clamps the fused output to `[0, 1]`.
pub fn infer_tiled(model: &SshNet, img: &Image) -> Result<Image> {
    let (h, w) = img.dims();
    let input = img.reflect_pad_to(padded(h), padded(w))?;
    let x = input.to_tensor(model.device(), model.dtype())?;
    let out = model.predict(&x)?;
    let y = Image::from_tensor(&out.y_hat.detach(), 0, img.id.clone())?;
    Ok(y.crop(0, 0, h, w)?.clamped())
}

/// All three branch outputs for one image, cropped to its size and clamped.
pub struct BranchImages {
    pub y_n: Option<Image>,
    pub y_wn: Option<Image>,
    pub y_hat: Image,
}

pub fn infer_branches(model: &SshNet, img: &Image) -> Result<BranchImages> {
    let (h, w) = img.dims();
    let input = img.reflect_pad_to(padded(h), padded(w))?;
    let out = model.predict(&input.to_tensor(model.device(), model.dtype())?)?;
    let to_img = |t: &Tensor| -> Result<Image> {
        Ok(Image::from_tensor(&t.detach(), 0, img.id.clone())?.crop(0, 0, h, w)?.clamped())
    };
    Ok(BranchImages {
        y_n: out.y_n.as_ref().map(to_img).transpose()?,
        y_wn: out.y_wn.as_ref().map(to_img).transpose()?,
        y_hat: to_img(&out.y_hat)?,
    })
}

/// Single-channel map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl GateMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.values.len() as f64;
        var.sqrt()
    }

    /// Fraction of entries strictly below `threshold`.
    pub fn fraction_below(&self, threshold: f32) -> f64 {
        self.values.iter().filter(|&&v| v < threshold).count() as f64 / self.values.len() as f64
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resized(&self, height: usize, width: usize) -> GateMap {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let at = |r: usize, c: usize| self.values[r * self.width + c];
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            let fy = ((r as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(self.height - 1);
            for c in 0..width {
                let fx = ((c as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(self.width - 1);
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                values.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        GateMap { height, width, values }
    }

    pub fn to_gray(&self, id: impl Into<String>) -> Image {
        Image::from_fn(self.height, self.width, id, |r, c| [self.values[r * self.width + c]; 3])
            .expect("gate map dimensions are positive")
    }

    /// Blue–white–red rendering centred on 0.5.
    pub fn to_heatmap(&self, id: impl Into<String>) -> Image {
        Image::from_fn(self.height, self.width, id, |r, c| colormap(self.values[r * self.width + c]))
            .expect("gate map dimensions are positive")
    }
}

/// Diverging colour ramp over `[0, 1]`.
pub fn colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    if v < 0.5 {
        let t = v / 0.5;
        [0.23 + 0.77 * t, 0.30 + 0.70 * t, 0.75 + 0.25 * t]
    } else {
        let t = (v - 0.5) / 0.5;
        [1.0 - 0.29 * t, 1.0 - 1.0 * t, 1.0 - 0.85 * t]
    }
}

/// Channel mean of the fusion gate, resized to the input resolution.
pub fn extract_gate_maps(model: &SshNet, img: &Image) -> Result<GateMap> {
    let (h, w) = img.dims();
    let input = img.reflect_pad_to(padded(h), padded(w))?;
    let out = model.predict(&input.to_tensor(model.device(), model.dtype())?)?;
    let gate = out
        .gate
        .ok_or_else(|| Error::Config(format!("variant {} has no fusion gate", model.config().variant)))?;
    let mean = gate.detach().mean_keepdim(1)?.squeeze(1)?.squeeze(0)?;
    let (gh, gw) = mean.dims2()?;
    let values: Vec<f32> = mean.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1()?;
    let full = GateMap { height: gh, width: gw, values };
    // Crop away the padding in gate coordinates, then resize to the input.
    let (ch, cw) = ((h * gh).div_ceil(padded(h)), (w * gw).div_ceil(padded(w)));
    let cropped = GateMap {
        height: ch,
        width: cw,
        values: (0..ch).flat_map(|r| full.values[r * gw..r * gw + cw].to_vec()).collect(),
    };
    Ok(cropped.resized(h, w))
}

/// Rows of `[input | restored | gate heat map]` panels.
pub fn montage(rows: &[(Image, Image, GateMap)]) -> Result<Image> {
    if rows.is_empty() {
        return Err(Error::Invalid("montage needs at least one row".into()));
    }
    let ph = rows.iter().map(|r| r.0.height()).max().unwrap_or(1);
    let pw = rows.iter().map(|r| r.0.width()).max().unwrap_or(1);
    let mut out = Image::filled(ph * rows.len(), pw * 3, [1.0; 3], "montage")?;
    for (i, (input, restored, gate)) in rows.iter().enumerate() {
        let heat = gate.to_heatmap("gate");
        for (j, panel) in [input, restored, &heat].into_iter().enumerate() {
            for r in 0..panel.height() {
                for c in 0..panel.width() {
                    out.set(i * ph + r, j * pw + c, panel.get(r, c));
                }
            }
        }
    }
    Ok(out)
}

/// Structural description with per-component costs.
#[derive(Clone, Debug, Serialize)]
pub struct ModelReport {
    pub config: ModelConfig,
    pub height: usize,
    pub width: usize,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
    pub layers: Vec<LayerCost>,
}

pub fn describe(model: &SshNet, height: usize, width: usize) -> ModelReport {
    let layers = model.cost_breakdown(height, width);
    let macs = layers.iter().map(|l| l.macs).sum();
    ModelReport {
        config: model.config().clone(),
        height,
        width,
        params: model.count_params(),
        macs,
        flops: 2 * macs,
        layers,
    }
}
