import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ppdn import RngStream, save_image
from ppdn.network import ArchConfig, DenoiserModel, ParamLayout
from ppdn.synthetic import make_corpus_patches, make_natural_image


class CorpusPatches:
    """Adapter so a raw (N, p, p, C) stack quacks like a PatchSet."""

    def __init__(self, stack):
        self._stack = stack

    def stack(self):
        return self._stack


@pytest.fixture(scope="session")
def gray_patches_8():
    """Small gray patches for the Monte-Carlo decomposition checks."""
    stack = make_corpus_patches(RngStream(2024, "corpus8"), 64, 8, channels=1)
    return CorpusPatches(stack)


@pytest.fixture(scope="session")
def natural_patches_40():
    """Natural-statistics 40x40 patches for the constant-reduction check."""
    stack = make_corpus_patches(RngStream(2025, "corpus40"), 32, 40, channels=3)
    return CorpusPatches(stack)


@pytest.fixture(scope="session")
def natural_image():
    """One fixed mid-size scene used by degradation tests."""
    return make_natural_image(RngStream(31, "scene"), 96, 96, channels=3)


def write_corpus(directory, n_images, size, seed, channels=3, span=(0.02, 0.98), prefix="img"):
    os.makedirs(directory, exist_ok=True)
    gen = RngStream(seed, "corpus-io")
    paths = []
    for i in range(n_images):
        img = make_natural_image(gen.derive(f"{prefix}{i}"), size, size, channels=channels, span=span)
        path = os.path.join(directory, f"{prefix}_{i:02d}.png")
        save_image(path, img)
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def tiny_train_dir(tmp_path_factory):
    """Three small images: enough for fast training smoke tests."""
    d = tmp_path_factory.mktemp("tiny_train")
    write_corpus(str(d), 3, 48, seed=7)
    return str(d)


def make_identity_model(channels=1):
    """A depth-3 network that is the identity on non-negative inputs.

    Batch norm off; every layer is a pass-through center-tap convolution,
    so relu(relu(x)) = x wherever x >= 0, and the trailing clamp makes the
    full denoise() output equal clamp(input) exactly.
    """
    arch = ArchConfig(
        depth=3, width=channels, in_channels=channels, out_channels=channels, use_batch_norm=False
    )
    model = DenoiserModel(arch, np.zeros(ParamLayout(arch).total_size, dtype=np.float32))
    for layer in (1, 2, 3):
        w = model.view(f"conv{layer}.w")
        for c in range(channels):
            w[1, 1, c, c] = 1.0
    model.train_mode = False
    return model
