"""Seeded, named random streams.

Every stochastic operator in the package draws from an :class:`RngStream`.
Streams with distinct ids derived from the same master seed are
statistically independent, and a (seed, stream_id, call sequence) triple
reproduces the same values bit-for-bit, which is what makes training runs
and evaluations replayable.
"""

import hashlib

import numpy as np


def _stream_key(stream_id):
    # Stable 64-bit digest of the label (hashlib, not hash(): PYTHONHASHSEED-proof).
    digest = hashlib.blake2s(stream_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A named PCG64 stream derived from a 64-bit master seed.

    Parameters
    ----------
    seed : int
      Master seed shared by all streams of one run.
    stream_id : str
      Label selecting an independent substream, e.g. ``"noise"``,
      ``"shift"``, ``"jpeg"``, ``"init"``, ``"batch-order"``.
    """

    def __init__(self, seed, stream_id):
        if not isinstance(seed, int):
            raise TypeError("seed must be an int")
        self.seed = seed
        self.stream_id = stream_id
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(_stream_key(stream_id),))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def derive(self, label):
        """Independent child stream, e.g. per-worker or per-image."""
        return RngStream(self.seed, f"{self.stream_id}/{label}")

    # Thin passthroughs so call sites read naturally.
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Inclusive-exclusive [low, high) like numpy."""
        return self.generator.integers(low, high, size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size=None, replace=True):
        return self.generator.choice(n, size=size, replace=replace)

    @property
    def state(self):
        """Serializable bit-generator state (plain dict of ints/strs)."""
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value):
        self.generator.bit_generator.state = value

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id!r})"
