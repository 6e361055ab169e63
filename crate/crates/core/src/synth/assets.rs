use std::path::Path;

use super::font::render_text;
use crate::error::{Error, Result};
use crate::imgcore::{load_rgba, save_rgba};

/// An RGBA watermark template. The alpha channel is the spatial opacity
/// map and is zero outside the mark.
#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkAsset {
    pub name: String,
    height: usize,
    width: usize,
    rgba: Vec<f32>,
}

impl WatermarkAsset {
    pub fn new(name: impl Into<String>, height: usize, width: usize, rgba: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || rgba.len() != height * width * 4 {
            return Err(Error::Shape(format!(
                "watermark needs {height}x{width}x4 values, got {}",
                rgba.len()
            )));
        }
        if rgba.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("watermark values must lie in [0, 1]".into()));
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            rgba,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 4] {
        let i = (row * self.width + col) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    pub fn rgba(&self) -> &[f32] {
        &self.rgba
    }

    /// Bilinear resize of colour and alpha together (half-pixel centres).
    pub fn resized(&self, height: usize, width: usize) -> WatermarkAsset {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut rgba = Vec::with_capacity(height * width * 4);
        for r in 0..height {
            let fy = ((r as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for c in 0..width {
                let fx = ((c as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                let (a, b, cc, d) = (self.get(y0, x0), self.get(y0, x1), self.get(y1, x0), self.get(y1, x1));
                for k in 0..4 {
                    let top = a[k] + (b[k] - a[k]) * tx;
                    let bot = cc[k] + (d[k] - cc[k]) * tx;
                    rgba.push((top + (bot - top) * ty).clamp(0.0, 1.0));
                }
            }
        }
        WatermarkAsset {
            name: self.name.clone(),
            height,
            width,
            rgba,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, w, rgba) = load_rgba(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, h, w, rgba)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_rgba(self.height, self.width, &self.rgba, path)
    }
}

/// Loads every `*.png` in `dir`, sorted by file name.
pub fn load_assets(dir: impl AsRef<Path>) -> Result<Vec<WatermarkAsset>> {
    let dir = dir.as_ref();
    let mut paths = super::corpus::list_pngs(dir)?;
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no watermark PNGs in {}", dir.display())));
    }
    paths.iter().map(WatermarkAsset::load).collect()
}

/// Writes the assets as `NN_name.png` into `dir`.
pub fn save_assets(assets: &[WatermarkAsset], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (i, a) in assets.iter().enumerate() {
        a.save(dir.join(format!("{i:02}_{}.png", a.name)))?;
    }
    Ok(())
}

/// Binary mask canvas used while drawing the templates.
struct Canvas {
    h: usize,
    w: usize,
    mask: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self { h, w, mask: vec![0.0; h * w] }
    }

    fn paint(&mut self, f: impl Fn(f32, f32) -> bool) {
        for r in 0..self.h {
            for c in 0..self.w {
                if f(r as f32 + 0.5, c as f32 + 0.5) {
                    self.mask[r * self.w + c] = 1.0;
                }
            }
        }
    }

    fn blit(&mut self, mh: usize, mw: usize, mask: &[bool], top: usize, left: usize) {
        for r in 0..mh.min(self.h.saturating_sub(top)) {
            for c in 0..mw.min(self.w.saturating_sub(left)) {
                if mask[r * mw + c] {
                    self.mask[(top + r) * self.w + left + c] = 1.0;
                }
            }
        }
    }

    fn dilate(&mut self, radius: usize) {
        let src = self.mask.clone();
        for r in 0..self.h {
            for c in 0..self.w {
                let r0 = r.saturating_sub(radius);
                let c0 = c.saturating_sub(radius);
                let hit = (r0..=(r + radius).min(self.h - 1))
                    .any(|y| (c0..=(c + radius).min(self.w - 1)).any(|x| src[y * self.w + x] > 0.0));
                if hit {
                    self.mask[r * self.w + c] = 1.0;
                }
            }
        }
    }

    /// One 3×3 box blur pass: soft matte edge, 4 px strokes keep an opaque core.
    fn soften(&mut self) {
        for _ in 0..1 {
            let src = self.mask.clone();
            for r in 0..self.h {
                for c in 0..self.w {
                    let mut acc = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let y = r as i64 + dy;
                            let x = c as i64 + dx;
                            if y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w {
                                acc += src[y as usize * self.w + x as usize];
                            }
                        }
                    }
                    self.mask[r * self.w + c] = acc / 9.0;
                }
            }
        }
    }

    fn into_asset(mut self, name: &str, color: impl Fn(f32, f32) -> [f32; 3]) -> WatermarkAsset {
        self.soften();
        let mut rgba = Vec::with_capacity(self.h * self.w * 4);
        for r in 0..self.h {
            for c in 0..self.w {
                let rgb = color(r as f32 / self.h as f32, c as f32 / self.w as f32);
                rgba.extend_from_slice(&[rgb[0], rgb[1], rgb[2], self.mask[r * self.w + c]]);
            }
        }
        WatermarkAsset {
            name: name.to_string(),
            height: self.h,
            width: self.w,
            rgba,
        }
    }
}

const PAD: usize = 4;

fn text_asset(name: &str, text: &str, bold: bool, color: [f32; 3]) -> WatermarkAsset {
    let (th, tw, mask) = render_text(text, 4);
    let mut canvas = Canvas::new(th + 2 * PAD, tw + 2 * PAD);
    canvas.blit(th, tw, &mask, PAD, PAD);
    if bold {
        canvas.dilate(1);
    }
    canvas.into_asset(name, |_, _| color)
}

fn ring(cy: f32, cx: f32, outer: f32, inner: f32) -> impl Fn(f32, f32) -> bool {
    move |y, x| {
        let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
        d <= outer && d >= inner
    }
}

fn star(cy: f32, cx: f32, outer: f32, inner: f32) -> impl Fn(f32, f32) -> bool {
    let pts: Vec<(f32, f32)> = (0..10)
        .map(|i| {
            let ang = -std::f32::consts::FRAC_PI_2 + i as f32 * std::f32::consts::PI / 5.0;
            let rad = if i % 2 == 0 { outer } else { inner };
            (cy + rad * ang.sin(), cx + rad * ang.cos())
        })
        .collect();
    move |y, x| point_in_polygon(&pts, y, x)
}

fn point_in_polygon(pts: &[(f32, f32)], y: f32, x: f32) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (yi, xi) = pts[i];
        let (yj, xj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn framed_square(size: f32, border: f32) -> impl Fn(f32, f32) -> bool {
    move |y, x| {
        let outer = y >= 2.0 && x >= 2.0 && y <= size - 2.0 && x <= size - 2.0;
        let hole = y > 2.0 + border && x > 2.0 + border && y < size - 2.0 - border && x < size - 2.0 - border;
        let diag = (y - x).abs() < border * 0.6;
        outer && (!hole || diag)
    }
}

fn logo_asset(name: &str, shape: impl Fn(f32, f32) -> bool, size: usize, color: [f32; 3]) -> WatermarkAsset {
    let mut canvas = Canvas::new(size, size);
    canvas.paint(shape);
    canvas.into_asset(name, |_, _| color)
}

fn mixed_asset(
    name: &str,
    text: &str,
    logo: impl Fn(f32, f32) -> bool,
    color: impl Fn(f32, f32) -> [f32; 3],
) -> WatermarkAsset {
    let (th, tw, mask) = render_text(text, 4);
    let logo_size = th + 2 * PAD;
    let mut canvas = Canvas::new(logo_size, logo_size + tw + 2 * PAD);
    canvas.paint(|y, x| x < logo_size as f32 && logo(y, x));
    canvas.blit(th, tw, &mask, PAD, logo_size + PAD);
    canvas.into_asset(name, color)
}

/// The twelve generated templates: three strings at two weights, three
/// geometric logos and three logo+text combinations.
pub fn builtin_assets() -> Vec<WatermarkAsset> {
    let white = [0.96, 0.96, 0.96];
    let grey = [0.55, 0.55, 0.58];
    let amber = [0.98, 0.72, 0.15];
    let blue = [0.20, 0.45, 0.95];
    let red = [0.90, 0.15, 0.15];
    let m = 36.0f32;
    vec![
        text_asset("sample_regular", "SAMPLE", false, white),
        text_asset("sample_bold", "SAMPLE", true, white),
        text_asset("preview_regular", "PREVIEW", false, grey),
        text_asset("preview_bold", "PREVIEW", true, amber),
        text_asset("stock_regular", "STOCK", false, blue),
        text_asset("stock_bold", "STOCK", true, red),
        logo_asset("logo_ring", ring(32.0, 32.0, 28.0, 18.0), 64, white),
        logo_asset("logo_star", star(32.0, 32.0, 30.0, 12.0), 64, amber),
        logo_asset("logo_frame", framed_square(64.0, 9.0), 64, blue),
        mixed_asset("mixed_ring_photo", "PHOTO", ring(m / 2.0, m / 2.0, 16.0, 10.0), |_, _| white),
        mixed_asset("mixed_star_demo", "DEMO", star(m / 2.0, m / 2.0, 17.0, 7.0), |_, x| {
            [0.95, 0.55 + 0.4 * x, 0.2]
        }),
        mixed_asset("mixed_frame_proof", "PROOF", framed_square(m, 6.0), |y, _| {
            [0.3 + 0.6 * y, 0.8, 0.9]
        }),
    ]
}
