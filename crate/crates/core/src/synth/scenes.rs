use rand::Rng;

use crate::imgcore::{Image, SeedSpec};

enum Shape {
    Disc { cy: f32, cx: f32, r: f32 },
    Rect { top: f32, left: f32, bottom: f32, right: f32 },
    Stripes { freq: f32, angle: f32, phase: f32 },
}

struct Layer {
    shape: Shape,
    color: [f32; 3],
    opacity: f32,
}

fn coverage(shape: &Shape, y: f32, x: f32) -> f32 {
    // One-pixel soft edges keep scenes free of hard aliasing.
    match *shape {
        Shape::Disc { cy, cx, r } => {
            let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            (r - d + 0.5).clamp(0.0, 1.0)
        }
        Shape::Rect { top, left, bottom, right } => {
            let v = (y - top + 0.5).min(bottom - y + 0.5).clamp(0.0, 1.0);
            let h = (x - left + 0.5).min(right - x + 0.5).clamp(0.0, 1.0);
            v * h
        }
        Shape::Stripes { freq, angle, phase } => {
            let t = y * angle.sin() + x * angle.cos();
            0.5 + 0.5 * (t * freq + phase).sin()
        }
    }
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// A deterministic synthetic scene: a smooth gradient backdrop with soft
/// discs, rectangles and striped textures layered on top.
pub fn procedural_scene(height: usize, width: usize, seed: &SeedSpec) -> Image {
    let mut rng = seed.rng();
    let (h, w) = (height as f32, width as f32);
    let corners = [color(&mut rng), color(&mut rng), color(&mut rng), color(&mut rng)];
    let n_layers = rng.random_range(4..9);
    let layers: Vec<Layer> = (0..n_layers)
        .map(|_| {
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    r: rng.random_range(0.05..0.35) * h.min(w),
                },
                1 => {
                    let top = rng.random_range(0.0..h * 0.8);
                    let left = rng.random_range(0.0..w * 0.8);
                    Shape::Rect {
                        top,
                        left,
                        bottom: top + rng.random_range(0.1..0.6) * h,
                        right: left + rng.random_range(0.1..0.6) * w,
                    }
                }
                _ => Shape::Stripes {
                    freq: rng.random_range(0.05..0.5),
                    angle: rng.random_range(0.0..std::f32::consts::PI),
                    phase: rng.random_range(0.0..std::f32::consts::TAU),
                },
            };
            let opacity = match shape {
                Shape::Stripes { .. } => rng.random_range(0.1..0.4),
                _ => rng.random_range(0.5..1.0),
            };
            Layer { shape, color: color(&mut rng), opacity }
        })
        .collect();

    Image::from_fn(height, width, seed.stream_id.clone(), |r, c| {
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        let (u, v) = (x / w, y / h);
        let mut px = [0.0f32; 3];
        for k in 0..3 {
            let top = corners[0][k] * (1.0 - u) + corners[1][k] * u;
            let bottom = corners[2][k] * (1.0 - u) + corners[3][k] * u;
            px[k] = top * (1.0 - v) + bottom * v;
        }
        for layer in &layers {
            let a = layer.opacity * coverage(&layer.shape, y, x);
            for k in 0..3 {
                px[k] = a * layer.color[k] + (1.0 - a) * px[k];
            }
        }
        px.map(|p| p.clamp(0.0, 1.0))
    })
    .expect("scene dimensions are positive")
}

/// `count` scenes named `{prefix}_{i:03}`.
pub fn procedural_scenes(count: usize, height: usize, width: usize, seed: u64, prefix: &str) -> Vec<Image> {
    (0..count)
        .map(|i| procedural_scene(height, width, &SeedSpec::new(seed, format!("{prefix}_{i:03}"))))
        .collect()
}
