//! Static PNG charts drawn straight into an [`Image`].

use anyhow::Result;
use sshnet_core::imgcore::Image;
use sshnet_core::synth::render_text;

const W: usize = 640;
const H: usize = 400;
const MARGIN: usize = 48;
const INK: [f32; 3] = [0.1, 0.1, 0.1];
const GRID: [f32; 3] = [0.85, 0.85, 0.85];
const LINE: [f32; 3] = [0.15, 0.35, 0.75];
const BAR: [f32; 3] = [0.8, 0.35, 0.2];

struct Canvas(Image);

impl Canvas {
    fn new() -> Result<Self> {
        Ok(Canvas(Image::filled(H, W, [1.0; 3], "plot")?))
    }

    fn dot(&mut self, r: i64, c: i64, rgb: [f32; 3]) {
        if r >= 0 && c >= 0 && (r as usize) < H && (c as usize) < W {
            self.0.set(r as usize, c as usize, rgb);
        }
    }

    fn rect(&mut self, r0: usize, c0: usize, r1: usize, c1: usize, rgb: [f32; 3]) {
        for r in r0..r1.min(H) {
            for c in c0..c1.min(W) {
                self.0.set(r, c, rgb);
            }
        }
    }

    /// Bresenham segment, two pixels thick.
    fn segment(&mut self, (r0, c0): (i64, i64), (r1, c1): (i64, i64), rgb: [f32; 3]) {
        let (dr, dc) = ((r1 - r0).abs(), -(c1 - c0).abs());
        let (sr, sc) = (if r0 < r1 { 1 } else { -1 }, if c0 < c1 { 1 } else { -1 });
        let (mut r, mut c, mut err) = (r0, c0, dr + dc);
        loop {
            self.dot(r, c, rgb);
            self.dot(r + 1, c, rgb);
            if r == r1 && c == c1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dc {
                err += dc;
                r += sr;
            }
            if e2 <= dr {
                err += dr;
                c += sc;
            }
        }
    }

    fn text(&mut self, s: &str, row: usize, col: usize) {
        let (h, w, mask) = render_text(&s.to_uppercase(), 2);
        for r in 0..h {
            for c in 0..w {
                if mask[r * w + c] {
                    self.dot((row + r) as i64, (col + c) as i64, INK);
                }
            }
        }
    }

    fn axes(&mut self, title: &str, lo: f64, hi: f64) {
        for k in 0..=4 {
            let r = MARGIN + k * (H - 2 * MARGIN) / 4;
            self.rect(r, MARGIN, r + 1, W - MARGIN, GRID);
        }
        self.rect(MARGIN, MARGIN, H - MARGIN, MARGIN + 1, INK);
        self.rect(H - MARGIN, MARGIN, H - MARGIN + 1, W - MARGIN, INK);
        self.text(title, 12, MARGIN);
        self.text(&format!("{hi:.3}"), MARGIN + 4, 4);
        self.text(&format!("{lo:.3}"), H - MARGIN - 18, 4);
    }
}

fn range(values: &[f64]) -> (f64, f64) {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart of `values` against their index.
pub fn line_chart(title: &str, values: &[f64]) -> Result<Image> {
    let mut cv = Canvas::new()?;
    let (lo, hi) = range(values);
    cv.axes(title, lo, hi);
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let n = values.len().max(2) - 1;
    let point = |i: usize, v: f64| {
        let c = MARGIN as f64 + pw * i as f64 / n as f64;
        let r = (H - MARGIN) as f64 - ph * (v - lo) / (hi - lo);
        (r.round() as i64, c.round() as i64)
    };
    let pts: Vec<(i64, i64)> = values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| point(i, v)).collect();
    for w in pts.windows(2) {
        cv.segment(w[0], w[1], LINE);
    }
    if let [only] = pts.as_slice() {
        cv.segment(*only, *only, LINE);
    }
    Ok(cv.0)
}

/// Vertical bars numbered from 1; the axis starts just below the smallest bar.
pub fn bar_chart(title: &str, bars: &[f64]) -> Result<Image> {
    let mut cv = Canvas::new()?;
    let (lo, hi) = range(bars);
    let lo = lo - 0.1 * (hi - lo).max(1e-6);
    cv.axes(title, lo, hi);
    let slot = (W - 2 * MARGIN) / bars.len().max(1);
    let ph = (H - 2 * MARGIN) as f64;
    for (i, v) in bars.iter().enumerate() {
        let c0 = MARGIN + i * slot + slot / 5;
        let c1 = MARGIN + (i + 1) * slot - slot / 5;
        if v.is_finite() {
            let top = (H - MARGIN) as f64 - ph * (v - lo) / (hi - lo);
            cv.rect(top.round().max(MARGIN as f64) as usize, c0, H - MARGIN, c1, BAR);
        }
        cv.text(&(i + 1).to_string(), H - MARGIN + 8, c0);
    }
    Ok(cv.0)
}
