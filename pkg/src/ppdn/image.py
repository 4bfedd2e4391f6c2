"""Canonical image representation, PNG I/O, patch extraction, augmentation.

Pixels live in [0, 1] float64 throughout the package; conversion to and
from 8-bit happens only at file I/O. An :class:`ImageTensor` is either a
single image (H, W, C) or a batch (B, H, W, C). Tensors produced by
noise-adding operators may exceed [0, 1] and carry ``clamped=False``.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (
    NonSquarePatchError,
    PatchTooLargeError,
    ShapeMismatchError,
    UnsupportedFormatError,
)

N_DIHEDRAL = 8


@dataclass(frozen=True)
class ImageTensor:
    """Immutable float image or image batch with a clamped-range flag.

    ``data`` is (H, W, C) or (B, H, W, C) float64. ``clamped`` records
    whether every value is known to lie in [0, 1]; noise-adding operators
    produce unclamped tensors on purpose (clamping would bias them).
    """

    data: np.ndarray
    clamped: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim not in (3, 4):
            raise ShapeMismatchError(
                f"image data must be (H, W, C) or (B, H, W, C), got shape {arr.shape}"
            )
        if arr.shape[-1] not in (1, 3):
            raise ShapeMismatchError(f"channels must be 1 or 3, got {arr.shape[-1]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def batch(self):
        """Batch size, or None for a single image."""
        return self.data.shape[0] if self.data.ndim == 4 else None

    @property
    def height(self):
        return self.data.shape[-3]

    @property
    def width(self):
        return self.data.shape[-2]

    @property
    def channels(self):
        return self.data.shape[-1]

    def clamp(self):
        """Copy with values clipped to [0, 1] and the flag set."""
        if self.clamped:
            return self
        return ImageTensor(np.clip(self.data, 0.0, 1.0), clamped=True)

    def with_data(self, data, clamped):
        return ImageTensor(data, clamped=clamped)


@dataclass
class PatchSet:
    """Square patches plus per-patch provenance (image id, top, left)."""

    patches: list
    source_index: list = field(default_factory=list)

    def __post_init__(self):
        if self.patches:
            first = self.patches[0]
            if first.height != first.width:
                raise NonSquarePatchError("patches must be square")
            for p in self.patches:
                if (p.height, p.width, p.channels) != (
                    first.height,
                    first.width,
                    first.channels,
                ):
                    raise ShapeMismatchError("patches differ in size or channels")
        if self.source_index and len(self.source_index) != len(self.patches):
            raise ValueError("source_index length must match patches")

    @property
    def patch_size(self):
        return self.patches[0].height if self.patches else 0

    @property
    def channels(self):
        return self.patches[0].channels if self.patches else 0

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def stack(self):
        """Patches as one (N, p, p, C) array."""
        return np.stack([p.data for p in self.patches], axis=0)


def load_image(path):
    """Read an 8-bit gray or RGB PNG into a clamped ImageTensor.

    Raises FileNotFoundError for a missing path and
    UnsupportedFormatError for anything that is not an 8-bit gray/RGB PNG.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with Image.open(path) as im:
        if im.format != "PNG":
            raise UnsupportedFormatError(f"{path}: not a PNG (format={im.format})")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)[:, :, None]
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.float64)
        else:
            raise UnsupportedFormatError(
                f"{path}: unsupported PNG mode {im.mode!r} (8-bit L or RGB only)"
            )
    return ImageTensor(arr / 255.0, clamped=True)


def save_image(path, img):
    """Write a clamped ImageTensor (single image) as an 8-bit PNG."""
    if img.batch is not None:
        raise ShapeMismatchError("save_image expects a single image, not a batch")
    data = np.clip(img.data, 0.0, 1.0)
    byte = np.round(data * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(byte[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(byte, mode="RGB")
    pil.save(path, format="PNG")


def extract_patches(img, patch_size, stride, rng, image_id=0):
    """All axis-aligned patches on the stride grid, order shuffled by rng.

    Parameters
    ----------
    img : ImageTensor
      Single image (H, W, C).
    patch_size, stride : int
      Grid geometry; offsets are 0, stride, ... while the patch fits.
    rng : RngStream
      Shuffles patch order.
    image_id : int
      Recorded in each patch's provenance triple.
    """
    if img.batch is not None:
        raise ShapeMismatchError("extract_patches expects a single image")
    if patch_size > min(img.height, img.width):
        raise PatchTooLargeError(
            f"patch_size {patch_size} exceeds image {img.height}x{img.width}"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    tops = range(0, img.height - patch_size + 1, stride)
    lefts = range(0, img.width - patch_size + 1, stride)
    offsets = [(t, l) for t in tops for l in lefts]
    order = rng.permutation(len(offsets))
    patches, index = [], []
    for i in order:
        t, l = offsets[i]
        patches.append(
            ImageTensor(
                img.data[t : t + patch_size, l : l + patch_size, :],
                clamped=img.clamped,
            )
        )
        index.append((image_id, t, l))
    return PatchSet(patches=patches, source_index=index)


def reassemble_patches(patch_set, height, width):
    """Place patches back at their recorded offsets.

    Returns (image, covered) where covered marks pixels written at least
    once. Within the covered region this inverts extract_patches exactly.
    """
    if not patch_set.patches:
        raise ValueError("empty patch set")
    c = patch_set.channels
    ps = patch_set.patch_size
    out = np.zeros((height, width, c))
    covered = np.zeros((height, width), dtype=bool)
    for patch, (_, t, l) in zip(patch_set.patches, patch_set.source_index):
        out[t : t + ps, l : l + ps, :] = patch.data
        covered[t : t + ps, l : l + ps] = True
    return ImageTensor(out, clamped=all(p.clamped for p in patch_set.patches)), covered


def dihedral(img, k):
    """Apply element k (0..7) of the dihedral group of the square.

    0..3 are clockwise rotations by k*90 degrees; 4..7 are the same
    rotations of the left-right mirror (all four are reflections). Every
    element permutes pixels, so the value multiset is preserved.
    """
    if img.height != img.width:
        raise NonSquarePatchError("dihedral transforms require a square patch")
    if not 0 <= k < N_DIHEDRAL:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    arr = img.data
    axes = (-3, -2)
    if k >= 4:
        arr = np.flip(arr, axis=-2)
    arr = np.rot90(arr, -(k % 4), axes=axes)
    return ImageTensor(np.ascontiguousarray(arr), clamped=img.clamped)


def augment(patch, rng):
    """One of the 8 dihedral transforms of a square patch, chosen uniformly."""
    k = int(rng.integers(0, N_DIHEDRAL))
    return dihedral(patch, k)
