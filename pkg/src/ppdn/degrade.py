"""Spatial degradation operators: stochastic row shifter and JPEG decay.

These produce the moving training targets for the push objective. The
shifter rotates rows circularly (an exact bijection, so pixel statistics
are untouched); the JPEG decay is a block-DCT quantization round-trip
with the standard luminance table, without entropy coding (entropy coding
is lossless and would not change a single pixel).
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ImageTooSmallError
from .image import ImageTensor
from .rng import RngStream

UP = 1
DOWN = -1

# Standard 8x8 luminance quantization table (quality-50 baseline).
LUMA_QUANT_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass
class ShiftSpec:
    """Row shifter parameters: direction (+1 up / -1 down), k ~ U{0..max_rows}."""

    direction: int = UP
    max_rows: int = 5
    rng: RngStream = None

    def __post_init__(self):
        if self.direction not in (UP, DOWN):
            raise ValueError("direction must be +1 (up) or -1 (down)")
        if self.max_rows < 0:
            raise ValueError("max_rows must be >= 0")


@dataclass
class JpegSpec:
    """JPEG decay parameters: quality fraction p ~ U[p_lo, p_hi], 0 < p <= 1."""

    quality_range: tuple = (0.8, 1.0)
    rng: RngStream = None

    def __post_init__(self):
        lo, hi = self.quality_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"quality_range must satisfy 0 < lo <= hi <= 1, got {self.quality_range}")


def shift_rows(img, k, direction=UP):
    """Circularly rotate rows by a fixed k in the given direction.

    Upward means row r of the output is row (r + k) mod H of the input.
    Columns and channels are untouched; the operation is an exact
    bijection, inverted by the same k in the opposite direction.
    """
    if direction not in (UP, DOWN):
        raise ValueError("direction must be +1 (up) or -1 (down)")
    rolled = np.roll(img.data, -int(k) * direction, axis=-3)
    return ImageTensor(rolled, clamped=img.clamped)


def shift(img, spec):
    """Stochastic row shift: k ~ Uniform{0..max_rows}. Returns (image, k)."""
    k = int(spec.rng.integers(0, spec.max_rows + 1))
    return shift_rows(img, k, spec.direction), k


def _quantized_table(p):
    """Quality-scaled luminance table for quality fraction p in (0, 1)."""
    q = int(round(100.0 * p))
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    table = np.floor((LUMA_QUANT_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def _blockify(channel):
    """(H8, W8) -> (nb, 8, 8) view-order blocks; H8, W8 multiples of 8."""
    h8, w8 = channel.shape
    blocks = channel.reshape(h8 // 8, 8, w8 // 8, 8).transpose(0, 2, 1, 3)
    return blocks.reshape(-1, 8, 8), (h8 // 8, w8 // 8)

def _unblockify(blocks, grid):
    nbh, nbw = grid
    return blocks.reshape(nbh, nbw, 8, 8).transpose(0, 2, 1, 3).reshape(nbh * 8, nbw * 8)


def jpeg_compress(img, p):
    """Deterministic JPEG-quality decay at a fixed quality fraction p.

    p = 1 is an exact pass-through. Otherwise, per channel: scale to
    [0, 255], subtract 128, pad H and W up to multiples of 8 by edge
    replication, take the orthonormal 8x8 block DCT-II, quantize each
    coefficient with the quality-scaled luminance table, invert, crop,
    rescale, clamp. Values outside [0, 1] are clipped before encoding
    (a codec round-trip is undefined outside the representable range).
    """
    if img.height < 8 or img.width < 8:
        raise ImageTooSmallError(
            f"jpeg decay needs H, W >= 8, got {img.height}x{img.width}"
        )
    if not (0.0 < p <= 1.0):
        raise ValueError(f"quality fraction must be in (0, 1], got {p}")
    if p == 1.0:
        return img

    table = _quantized_table(p)
    data = np.clip(img.data, 0.0, 1.0)
    single = data.ndim == 3
    if single:
        data = data[None]

    b, h, w, c = data.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    out = np.empty_like(data)
    for bi in range(b):
        for ci in range(c):
            ch = data[bi, :, :, ci] * 255.0 - 128.0
            ch = np.pad(ch, ((0, pad_h), (0, pad_w)), mode="edge")
            blocks, grid = _blockify(ch)
            coef = dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
            coef = np.round(coef / table) * table
            rec = idctn(coef, type=2, norm="ortho", axes=(-2, -1))
            rec = _unblockify(rec, grid)[:h, :w]
            out[bi, :, :, ci] = (rec + 128.0) / 255.0
    out = np.clip(out, 0.0, 1.0)
    if single:
        out = out[0]
    return ImageTensor(out, clamped=True)


def jpeg_decay(img, spec):
    """Stochastic JPEG decay: p ~ Uniform[p_lo, p_hi]. Returns (image, p)."""
    lo, hi = spec.quality_range
    p = float(spec.rng.uniform(lo, hi))
    return jpeg_compress(img, p), p
