"""Procedural test images with natural-image statistics.

Photographic corpora cannot ship with the package, so tests and demos
draw scenes from this generator instead: piecewise-smooth regions with
sharp edges, 1/f-style multiscale shading, mild texture, and intensities
spanning the full [0, 1] range including near-black and near-white areas
(so clamping behaves as it does on photographs).
"""

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import ImageTensor


def _smooth_field(rng, h, w, scales=(0.5, 0.25, 0.125)):
    """Sum of smoothed white-noise octaves, amplitude proportional to scale."""
    field = np.zeros((h, w))
    for frac in scales:
        sigma = max(1.0, frac * min(h, w) / 2.0)
        layer = gaussian_filter(rng.normal(0.0, 1.0, size=(h, w)), sigma, mode="reflect")
        sd = layer.std()
        if sd > 0:
            field += frac * layer / sd
    return field


def _ellipse_mask(rng, h, w):
    cy = rng.uniform(0.15, 0.85) * h
    cx = rng.uniform(0.15, 0.85) * w
    ry = rng.uniform(0.08, 0.35) * h
    rx = rng.uniform(0.08, 0.35) * w
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    y0 = yy - cy
    x0 = xx - cx
    yr = y0 * np.cos(theta) - x0 * np.sin(theta)
    xr = y0 * np.sin(theta) + x0 * np.cos(theta)
    return (yr / ry) ** 2 + (xr / rx) ** 2 <= 1.0


def _halfplane_mask(rng, h, w):
    theta = rng.uniform(0.0, 2.0 * np.pi)
    offset = rng.uniform(0.25, 0.75)
    yy, xx = np.mgrid[0:h, 0:w]
    proj = (yy / h) * np.cos(theta) + (xx / w) * np.sin(theta)
    return proj > offset * (np.cos(theta) + np.sin(theta))


def make_natural_image(rng, height, width, channels=3, n_shapes=6, span=(0.02, 0.98)):
    """One synthetic scene as a clamped ImageTensor.

    Layers, in order: a multiscale shaded background, a global linear
    ramp, n_shapes flat-ish regions with crisp boundaries (ellipses and
    half-planes at random levels), and low-amplitude fine texture. RGB
    images get per-channel variation around a shared luminance so colors
    stay correlated the way photographs are. span controls the intensity
    range the luminance is mapped onto (narrow it to reduce how much
    added noise will clamp).
    """
    base = _smooth_field(rng, height, width)
    yy, xx = np.mgrid[0:height, 0:width]
    gy, gx = rng.uniform(-0.4, 0.4, size=2)
    base = base + gy * (yy / height) + gx * (xx / width)

    for _ in range(n_shapes):
        mask = _ellipse_mask(rng, height, width) if rng.uniform() < 0.7 else _halfplane_mask(rng, height, width)
        level = rng.uniform(-1.2, 1.2)
        blend = rng.uniform(0.55, 0.95)
        inner = _smooth_field(rng, height, width, scales=(0.15,)) * 0.25 + level
        base = np.where(mask, blend * inner + (1.0 - blend) * base, base)

    texture = rng.normal(0.0, 1.0, size=(height, width))
    base = base + 0.02 * gaussian_filter(texture, 0.7, mode="reflect")

    lo, hi = np.quantile(base, [0.005, 0.995])
    width_ = max(hi - lo, 1e-9)
    luma = np.clip((base - lo) / width_, 0.0, 1.0) * (span[1] - span[0]) + span[0]

    if channels == 1:
        return ImageTensor(luma[:, :, None], clamped=True)
    chroma_scale = rng.uniform(0.05, 0.18)
    img = np.empty((height, width, 3))
    for c in range(3):
        tint = gaussian_filter(
            rng.normal(0.0, 1.0, size=(height, width)), max(2.0, height / 10.0), mode="reflect"
        )
        sd = tint.std()
        if sd > 0:
            tint = tint / sd
        img[:, :, c] = luma + chroma_scale * tint
    return ImageTensor(np.clip(img, 0.0, 1.0), clamped=True)


def make_corpus_patches(rng, n_patches, patch_size, channels=3, span=(0.02, 0.98)):
    """Stack of clean patches cut from freshly generated scenes."""
    patches = []
    per_image = max(1, n_patches // 8)
    size = patch_size * 2 + 8
    while len(patches) < n_patches:
        img = make_natural_image(rng, size, size, channels=channels, span=span)
        for _ in range(per_image):
            if len(patches) >= n_patches:
                break
            top = int(rng.integers(0, size - patch_size + 1))
            left = int(rng.integers(0, size - patch_size + 1))
            patches.append(img.data[top : top + patch_size, left : left + patch_size, :])
    return np.stack(patches, axis=0)
