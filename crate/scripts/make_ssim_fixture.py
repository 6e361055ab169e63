"""Writes the SSIM reference fixture used by the metric acceptance check.

Twenty RGB pairs are stored as 8-bit PNGs; the reference score is
scikit-image's Gaussian-weighted SSIM on BT.601 luma (sigma 1.5, population
covariance, data range 1), which is an implementation independent of ours.
"""

import json
import pathlib

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage.metrics import structural_similarity

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/ssim"


def luma(rgb):
    x = rgb.astype(np.float64) / 255.0
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def smooth_field(rng, h, w):
    base = rng.random((h, w, 3))
    sigma = rng.uniform(1.0, 4.0)
    field = np.stack([gaussian_filter(base[..., c], sigma) for c in range(3)], axis=-1)
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo + 1e-12)


def degrade(rng, img, kind):
    if kind == 0:
        return img + rng.normal(0.0, rng.uniform(0.02, 0.2), img.shape)
    if kind == 1:
        s = rng.uniform(0.5, 2.0)
        return np.stack([gaussian_filter(img[..., c], s) for c in range(3)], axis=-1)
    if kind == 2:
        return img * rng.uniform(0.6, 0.95) + rng.uniform(0.0, 0.1)
    return np.roll(img, int(rng.integers(1, 3)), axis=int(rng.integers(0, 2)))


def to_u8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240611)
    records = []
    for i in range(20):
        h = int(rng.integers(16, 49))
        w = int(rng.integers(16, 49))
        a = to_u8(smooth_field(rng, h, w))
        b = to_u8(degrade(rng, a.astype(np.float64) / 255.0, i % 4))
        Image.fromarray(a).save(OUT / f"pair{i:02}_a.png")
        Image.fromarray(b).save(OUT / f"pair{i:02}_b.png")
        score = structural_similarity(
            luma(a),
            luma(b),
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
        )
        records.append({"a": f"pair{i:02}_a.png", "b": f"pair{i:02}_b.png", "ssim": float(score)})
    (OUT / "reference.json").write_text(json.dumps(records, indent=1) + "\n")


if __name__ == "__main__":
    main()
