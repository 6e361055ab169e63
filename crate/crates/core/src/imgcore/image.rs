use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// An H×W RGB image stored row-major, channel-interleaved.
///
/// Values decoded from files lie in `[0, 1]`; noisy intermediates may leave
/// that range and are kept unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    pub id: String,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, id: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            id: id.into(),
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3], id: impl Into<String>) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels, id)
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        id: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                pixels.extend_from_slice(&f(r, c));
            }
        }
        Self::new(height, width, pixels, id)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Copies the `h`×`w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image> {
        if row + h > self.height || col + w > self.width || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "crop {h}x{w}@({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for r in row..row + h {
            let start = (r * self.width + col) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Image::new(h, w, pixels, self.id.clone())
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }

    /// Mirror-pads bottom and right edges up to `(height, width)`.
    pub fn reflect_pad_to(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(Error::Shape("reflect pad target smaller than image".into()));
        }
        Image::from_fn(height, width, self.id.clone(), |r, c| {
            self.get(reflect_index(r, self.height), reflect_index(c, self.width))
        })
    }

    /// Converts to a `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let hw = self.height * self.width;
        let mut planar = vec![0f32; hw * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            planar[i] = px[0];
            planar[hw + i] = px[1];
            planar[2 * hw + i] = px[2];
        }
        let t = Tensor::from_vec(planar, (1, 3, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks same-shaped images into a `(N, 3, H, W)` tensor.
    pub fn batch_to_tensor(images: &[&Image], device: &Device, dtype: DType) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Invalid("empty image batch".into()))?;
        let parts = images
            .iter()
            .map(|img| {
                img.same_shape(first)?;
                img.to_tensor(device, dtype)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Reads item `index` of a `(N, 3, H, W)` or `(3, H, W)` tensor back into an image.
    pub fn from_tensor(t: &Tensor, index: usize, id: impl Into<String>) -> Result<Image> {
        let t = match t.rank() {
            4 => t.get(index)?,
            3 => t.clone(),
            r => return Err(Error::Shape(format!("expected rank 3 or 4 tensor, got {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let planar = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let hw = h * w;
        let mut pixels = vec![0f32; hw * 3];
        for i in 0..hw {
            pixels[3 * i] = planar[i];
            pixels[3 * i + 1] = planar[hw + i];
            pixels[3 * i + 2] = planar[2 * hw + i];
        }
        Image::new(h, w, pixels, id)
    }
}

/// Whole-sample symmetric reflection (`dcb|abcd|cba`), valid for any overhang.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Luma channel with BT.601 full-range weights, returned row-major.
pub fn to_luma_ycbcr(img: &Image) -> Vec<f32> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}
