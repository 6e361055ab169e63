use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::image::{to_luma_ycbcr, Image};
use crate::error::{Error, Result};

/// tEXt keyword carrying `"<lo> <hi>"` for 16-bit files stored with an
/// affine intensity range instead of `[0, 1]`.
const RANGE_KEY: &str = "sshnet-range";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn format_err(path: &Path, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f32>,
    range: Option<(f32, f32)>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e))?;
    reader.finish().map_err(|e| format_err(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette")),
    };
    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&v| v as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        d => return Err(format_err(path, format!("unsupported bit depth {d:?}"))),
    };
    let range = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == RANGE_KEY)
        .map(|t| parse_range(&t.text).ok_or_else(|| format_err(path, "malformed range header")))
        .transpose()?;
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        samples,
        range,
    })
}

/// Decodes an 8- or 16-bit PNG (grey, grey+alpha, RGB or RGBA; alpha is
/// dropped). Files written by [`save_image_affine16`] are mapped back to
/// their original range.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let d = decode(path)?;
    let mut pixels = Vec::with_capacity(d.width * d.height * 3);
    for px in d.samples.chunks_exact(d.channels) {
        match d.channels {
            1 | 2 => pixels.extend_from_slice(&[px[0]; 3]),
            _ => pixels.extend_from_slice(&px[..3]),
        }
    }
    if let Some((lo, hi)) = d.range {
        pixels.iter_mut().for_each(|v| *v = lo + *v * (hi - lo));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Image::new(d.height, d.width, pixels, id)
}

/// Decodes a PNG into interleaved RGBA in `[0, 1]`; opaque formats get alpha 1.
/// Returns `(height, width, samples)`.
pub fn load_rgba(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let d = decode(path)?;
    let mut out = Vec::with_capacity(d.width * d.height * 4);
    for px in d.samples.chunks_exact(d.channels) {
        match d.channels {
            1 => out.extend_from_slice(&[px[0], px[0], px[0], 1.0]),
            2 => out.extend_from_slice(&[px[0], px[0], px[0], px[1]]),
            3 => out.extend_from_slice(&[px[0], px[1], px[2], 1.0]),
            _ => out.extend_from_slice(px),
        }
    }
    Ok((d.height, d.width, out))
}

/// Writes interleaved RGBA samples as an 8-bit PNG.
pub fn save_rgba(height: usize, width: usize, rgba: &[f32], path: impl AsRef<Path>) -> Result<()> {
    if rgba.len() != height * width * 4 {
        return Err(Error::Shape(format!(
            "RGBA buffer has {} values for {height}x{width}",
            rgba.len()
        )));
    }
    write_png(path.as_ref(), width, height, png::ColorType::Rgba, BitDepth::Eight, rgba, None)
}

fn parse_range(text: &str) -> Option<(f32, f32)> {
    let mut it = text.split_whitespace().map(str::parse::<f32>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(lo)), Some(Ok(hi)), None) if hi > lo => Some((lo, hi)),
        _ => None,
    }
}

fn quantize(v: f32, depth: BitDepth) -> u16 {
    let max = match depth {
        BitDepth::Eight => 255.0,
        BitDepth::Sixteen => 65535.0,
    };
    (v.clamp(0.0, 1.0) * max).round() as u16
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: BitDepth,
    samples: &[f32],
    text: Option<(&str, String)>,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    let data: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            samples.iter().map(|&v| quantize(v, depth) as u8).collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            samples
                .iter()
                .flat_map(|&v| quantize(v, depth).to_be_bytes())
                .collect()
        }
    };
    if let Some((k, v)) = text {
        enc.add_text_chunk(k.to_string(), v).map_err(|e| format_err(path, e))?;
    }
    let mut writer = enc.write_header().map_err(|e| format_err(path, e))?;
    writer.write_image_data(&data).map_err(|e| format_err(path, e))?;
    writer.finish().map_err(|e| format_err(path, e))?;
    Ok(())
}

/// Writes an RGB PNG; values are clamped to `[0, 1]` before quantization.
pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let (h, w) = img.dims();
    write_png(path.as_ref(), w, h, png::ColorType::Rgb, depth, img.pixels(), None)
}

/// Writes a single-channel PNG holding the image's luma.
pub fn save_image_luma(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let (h, w) = img.dims();
    let luma = to_luma_ycbcr(img);
    write_png(path.as_ref(), w, h, png::ColorType::Grayscale, depth, &luma, None)
}

/// Writes a 16-bit RGB PNG whose range `[min(0, lo), max(1, hi)]` is recorded
/// in a text chunk, so unclamped values survive a round trip.
pub fn save_image_affine16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let (mn, mx) = img.min_max();
    let lo = mn.min(0.0).floor();
    let hi = mx.max(1.0).ceil();
    let scale = hi - lo;
    let normalized: Vec<f32> = img.pixels().iter().map(|&v| (v - lo) / scale).collect();
    let (h, w) = img.dims();
    write_png(
        path.as_ref(),
        w,
        h,
        png::ColorType::Rgb,
        BitDepth::Sixteen,
        &normalized,
        Some((RANGE_KEY, format!("{lo} {hi}"))),
    )
}
