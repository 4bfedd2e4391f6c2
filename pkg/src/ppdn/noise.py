"""Synthetic corruption (AWGN, Poisson) and paired re-corruption.

The pair generator produces two fresh re-corruptions (a1, a2) of one noisy
image with the same noise scale as the original corruption. They share the
underlying image, have equal expectations, and differ with probability one,
which is what blocks identity collapse during training.
"""

from dataclasses import dataclass

import numpy as np

from .image import ImageTensor


GAUSSIAN = "gaussian"
POISSON = "poisson"


@dataclass
class NoiseSpec:
    """Noise family plus its parameters and random stream.

    sigma is in [0, 1]-domain units (sigma = 25/255 is the usual "25").
    sigma = 0 is allowed as a degenerate case for corrupt(), but a valid
    observation pair requires sigma > 0. For Poisson, lambda is drawn
    uniformly from lambda_range per image.
    """

    family: str = GAUSSIAN
    sigma: float = 25.0 / 255.0
    lambda_range: tuple = (5.0, 50.0)
    rng: object = None

    def __post_init__(self):
        if self.family not in (GAUSSIAN, POISSON):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == GAUSSIAN and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.family == POISSON:
            lo, hi = self.lambda_range
            if not (0 < lo <= hi):
                raise ValueError("lambda_range must satisfy 0 < lo <= hi")

    def describe(self):
        if self.family == GAUSSIAN:
            return f"gaussian sigma={self.sigma * 255.0:.4g}/255"
        lo, hi = self.lambda_range
        return f"poisson lambda=[{lo:g}, {hi:g}]"


@dataclass
class ObservationPair:
    """Two independent re-corruptions of the same noisy source."""

    a1: ImageTensor
    a2: ImageTensor
    source: ImageTensor


def _draw_lambdas(spec, batch):
    lo, hi = spec.lambda_range
    n = 1 if batch is None else batch
    lam = spec.rng.uniform(lo, hi, size=n)
    return lam


def _poisson_sample(spec, base, lam):
    # base is clamped to [0, 1]; lam broadcasts per batch item.
    shape = base.shape
    if base.ndim == 4:
        lam_full = lam.reshape(-1, 1, 1, 1)
    else:
        lam_full = lam[0]
    counts = spec.rng.poisson(lam_full * base, size=shape)
    return counts / lam_full


def corrupt(clean, spec):
    """Apply synthetic noise to a clamped clean image (or batch).

    Gaussian: clean + n with n ~ N(0, sigma^2) i.i.d. per element.
    Poisson: one lambda ~ U[lo, hi] per image, then Poisson(lambda * v) / lambda
    per pixel. The result is intentionally not clamped.
    """
    if not clean.clamped:
        raise ValueError("corrupt expects a clamped input")
    if spec.family == GAUSSIAN:
        if spec.sigma == 0.0:
            return ImageTensor(clean.data.copy(), clamped=True)
        noisy = clean.data + spec.rng.normal(0.0, spec.sigma, size=clean.data.shape)
        return ImageTensor(noisy, clamped=False)
    lam = _draw_lambdas(spec, clean.batch)
    return ImageTensor(_poisson_sample(spec, clean.data, lam), clamped=False)


def make_observation_pair(noisy, spec):
    """Fresh observation pair (a1, a2) from one noisy image (or batch).

    Gaussian: a1 = noisy + O1, a2 = noisy + O2 with O1, O2 independent
    N(0, sigma^2) at the same sigma as the original corruption. Poisson:
    independent Poisson re-corruptions of clamp(noisy) sharing one lambda
    per image. The source is left untouched.
    """
    if spec.family == GAUSSIAN:
        if spec.sigma <= 0.0:
            raise ValueError("observation pair needs sigma > 0")
        o1 = spec.rng.normal(0.0, spec.sigma, size=noisy.data.shape)
        o2 = spec.rng.normal(0.0, spec.sigma, size=noisy.data.shape)
        a1 = ImageTensor(noisy.data + o1, clamped=False)
        a2 = ImageTensor(noisy.data + o2, clamped=False)
    else:
        base = np.clip(noisy.data, 0.0, 1.0)
        lam = _draw_lambdas(spec, noisy.batch)
        a1 = ImageTensor(_poisson_sample(spec, base, lam), clamped=False)
        a2 = ImageTensor(_poisson_sample(spec, base, lam), clamped=False)
    if np.array_equal(a1.data, a2.data):
        raise RuntimeError("degenerate pair: a1 == a2 (identical noise draws)")
    return ObservationPair(a1=a1, a2=a2, source=noisy)
