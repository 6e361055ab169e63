use serde::{Deserialize, Serialize};

use super::image::{to_luma_ycbcr, Image};
use crate::error::{Error, Result};
use crate::losses::Lpips;

/// Which pixels PSNR is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrDomain {
    #[default]
    Rgb,
    Luma,
}

/// Per-image quality record. `psnr` is `f64::INFINITY` for identical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

/// JSON has no infinity literal; the sentinel is written as the string `"inf"`.
pub(crate) mod inf_as_string {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && v.is_sign_positive() {
            "inf".serialize(s)
        } else {
            v.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(de::Error::custom(format!("bad psnr value {s:?}"))),
        }
    }
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// Peak signal-to-noise ratio over all RGB samples.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    a.same_shape(b)?;
    Ok(psnr_from_mse(mse(a.pixels(), b.pixels()), max_val))
}

/// PSNR over the BT.601 luma channel only.
pub fn psnr_luma(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    a.same_shape(b)?;
    Ok(psnr_from_mse(mse(&to_luma_ycbcr(a), &to_luma_ycbcr(b)), max_val))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of a row-major `h`×`w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over the luma channel with the standard Gaussian window.
pub fn ssim_y(a: &Image, b: &Image) -> Result<f64> {
    ssim_y_with(a, b, &SsimParams::default())
}

pub fn ssim_y_with(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    a.same_shape(b)?;
    let (h, w) = a.dims();
    if h < p.window || w < p.window {
        return Err(Error::Shape(format!(
            "SSIM needs at least {0}x{0} pixels, got {h}x{w}",
            p.window
        )));
    }
    let x: Vec<f64> = to_luma_ycbcr(a).into_iter().map(f64::from).collect();
    let y: Vec<f64> = to_luma_ycbcr(b).into_iter().map(f64::from).collect();
    let k = gaussian_kernel(p.window, p.sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&xx, h, w, &k);
    let syy = filter_valid(&yy, h, w, &k);
    let sxy = filter_valid(&xy, h, w, &k);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// LPIPS distance, or `None` when no perceptual weights are installed.
pub fn lpips(a: &Image, b: &Image, model: Option<&Lpips>) -> Result<Option<f64>> {
    a.same_shape(b)?;
    match model {
        Some(m) => m.distance(a, b).map(Some),
        None => Ok(None),
    }
}
