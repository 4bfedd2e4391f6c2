"""PSNR/SSIM and the directory evaluation harness.

PSNR uses MAX = 1.0 on clamped tensors (equivalent to the 255-domain
formula) and caps at 100 dB. SSIM follows the standard recipe: 11x11
Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0,
valid-region windows only, computed per channel and averaged.
"""

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import convolve2d

from .errors import EmptyDatasetError, ImageTooSmallError, ShapeMismatchError
from .image import ImageTensor, load_image
from .noise import corrupt
from .rng import RngStream

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Rec. 601 luma weights, for the luminance-only SSIM mode.
_LUMA = np.array([0.299, 0.587, 0.114])


def _as_clamped_array(x, name):
    if isinstance(x, ImageTensor):
        if not x.clamped:
            raise ValueError(f"{name} must be clamped to [0, 1] (call .clamp())")
        return x.data
    return np.asarray(x, dtype=np.float64)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB between clamped [0, 1] images.

    Identical inputs (MSE = 0) return the 100 dB cap; the cap also bounds
    near-zero-MSE results so the value is always finite.
    """
    a = _as_clamped_array(a, "a")
    b = _as_clamped_array(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / err), PSNR_CAP_DB)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_channel(x, y, window):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    xx = convolve2d(x * x, window, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, window, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def ssim(a, b, mode="channel-mean"):
    """Structural similarity between clamped [0, 1] images.

    mode="channel-mean" averages per-channel SSIM; mode="luma" converts
    RGB to Rec. 601 luminance first. Requires min(H, W) >= 11.
    """
    a = _as_clamped_array(a, "a")
    b = _as_clamped_array(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ShapeMismatchError("ssim expects a single (H, W, C) image")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ImageTooSmallError(f"ssim needs min dimension >= {SSIM_WINDOW}")
    if mode not in ("channel-mean", "luma"):
        raise ValueError(f"unknown ssim mode {mode!r}")
    window = _gaussian_window()
    if mode == "luma" and a.shape[2] == 3:
        return _ssim_channel(a @ _LUMA, b @ _LUMA, window)
    vals = [_ssim_channel(a[:, :, c], b[:, :, c], window) for c in range(a.shape[2])]
    return float(np.mean(vals))


@dataclass
class ImageRecord:
    name: str
    noisy_psnr: float
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    """Per-image metric rows plus their arithmetic means."""

    dataset: str
    noise: str
    records: list = field(default_factory=list)
    checkpoint: str = ""
    timestamp: float = 0.0

    @property
    def n_images(self):
        return len(self.records)

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr for r in self.records]))

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.records]))

    @property
    def mean_noisy_psnr(self):
        return float(np.mean([r.noisy_psnr for r in self.records]))

    def summary(self):
        return {
            "dataset": self.dataset,
            "noise": self.noise,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "n_images": self.n_images,
            "checkpoint": self.checkpoint,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "noisy_psnr", "psnr", "ssim"])
            for r in self.records:
                writer.writerow([r.name, f"{r.noisy_psnr:.6f}", f"{r.psnr:.6f}", f"{r.ssim:.6f}"])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def evaluate(
    model,
    testset_dir,
    noise,
    seed,
    ssim_mode="channel-mean",
    two_pass=False,
    checkpoint_id="",
    jobs=1,
):
    """Corrupt, denoise, and score every PNG in a directory.

    Noise for each image is seeded from (seed, filename), so the report is
    independent of directory order and of the parallelism degree. Returns
    a MetricsReport sorted by filename.
    """
    from .training import denoise

    names = sorted(f for f in os.listdir(testset_dir) if f.lower().endswith(".png"))
    if not names:
        raise EmptyDatasetError(f"no PNG images in {testset_dir}")

    def one(name):
        clean = load_image(os.path.join(testset_dir, name))
        spec = replace(noise, rng=RngStream(seed, f"eval:{name}"))
        noisy = corrupt(clean, spec)
        noisy_clamped = noisy.clamp()
        out = denoise(model, noisy, two_pass=two_pass)
        return ImageRecord(
            name=name,
            noisy_psnr=psnr(noisy_clamped, clean),
            psnr=psnr(out, clean),
            ssim=ssim(out, clean, mode=ssim_mode),
        )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, names))
    else:
        records = [one(name) for name in names]

    return MetricsReport(
        dataset=str(testset_dir),
        noise=noise.describe(),
        records=records,
        checkpoint=checkpoint_id,
        timestamp=time.time(),
    )
