"""Push and pull objectives.

Push drives the network toward intentionally degraded views of the second
observation: the first application must match a row-shifted copy, and the
composed application must match a JPEG-decayed copy. Pull equalizes the
network's outputs on oppositely shifted copies of each observation, a
stochastic identity regularizer that restores detail the push smoothing
would otherwise erase. Targets are constants (no gradient flows into
them); the model receives gradient through every forward pass involved,
including both applications of the composed pass unless detach_inner
is set.
"""

from dataclasses import dataclass, replace

import numpy as np

from .degrade import DOWN, UP, jpeg_decay, shift
from .network import backward, forward_with_tape


def mse(a, b):
    """Mean of squared elementwise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


@dataclass
class PushTerms:
    """Targets, outputs, and value of the push objective.

    b1 is the row-shifted second observation, b2 its JPEG-decayed version;
    d1 = f(a1) and d2 = f(d1). value = MSE(d1, b1) + MSE(d2, b2).
    """

    b1: np.ndarray
    b2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    value: float
    shift_k: int = 0
    jpeg_p: float = 1.0


@dataclass
class PullTerms:
    """Outputs and value of the pull objective.

    mo1/mo2 are network outputs for up/down shifted copies of a1, no1/no2
    for a2. value = MSE(mo1, mo2) + MSE(no1, no2).
    """

    mo1: np.ndarray
    mo2: np.ndarray
    no1: np.ndarray
    no2: np.ndarray
    value: float


class PushTape:
    """Backward pass for the push objective through both applications."""

    def __init__(self, model, terms, tape1, tape2, detach_inner):
        self.model = model
        self.terms = terms
        self.tape1 = tape1
        self.tape2 = tape2
        self.detach_inner = detach_inner

    def param_grads(self):
        t = self.terms
        g2 = 2.0 * (t.d2 - t.b2) / t.d2.size
        grads2, dd1 = backward(self.model, self.tape2, g2, with_input_grad=True)
        g1 = 2.0 * (t.d1 - t.b1) / t.d1.size
        if not self.detach_inner:
            g1 = g1 + dd1
        grads1 = backward(self.model, self.tape1, g1)
        return grads1 + grads2


class PullTape:
    """Backward pass for the pull objective through all four passes."""

    def __init__(self, model, terms, tapes):
        self.model = model
        self.terms = terms
        self.tapes = tapes  # (mo1, mo2, no1, no2) order

    def param_grads(self):
        t = self.terms
        dmo = 2.0 * (t.mo1 - t.mo2) / t.mo1.size
        dno = 2.0 * (t.no1 - t.no2) / t.no1.size
        grads = backward(self.model, self.tapes[0], dmo)
        grads += backward(self.model, self.tapes[1], -dmo)
        grads += backward(self.model, self.tapes[2], dno)
        grads += backward(self.model, self.tapes[3], -dno)
        return grads


def push_loss(model, pair, shift_spec, jpeg_spec, detach_inner=False):
    """Compute the push objective for one observation pair (or batch).

    The shift target always uses the upward direction; its k and the JPEG
    quality p are drawn fresh on every call so the targets keep moving
    between steps. Returns (PushTerms, PushTape).
    """
    b1_img, k = shift(pair.a2, replace(shift_spec, direction=UP))
    b2_img, p = jpeg_decay(pair.a2, jpeg_spec)
    d1, tape1 = forward_with_tape(model, pair.a1)
    d2, tape2 = forward_with_tape(model, d1)
    b1 = b1_img.data
    b2 = b2_img.data
    value = mse(d1, b1) + mse(d2, b2)
    terms = PushTerms(b1=b1, b2=b2, d1=d1, d2=d2, value=value, shift_k=k, jpeg_p=p)
    return terms, PushTape(model, terms, tape1, tape2, detach_inner)


def pull_loss(model, pair, shift_spec):
    """Compute the pull objective: four independent shifter draws.

    mo1 = f(shift_up(a1)), mo2 = f(shift_down(a1)) and likewise no1/no2
    for a2; each shift draws its own k. Returns (PullTerms, PullTape).
    """
    up = replace(shift_spec, direction=UP)
    down = replace(shift_spec, direction=DOWN)
    in_mo1, _ = shift(pair.a1, up)
    in_mo2, _ = shift(pair.a1, down)
    in_no1, _ = shift(pair.a2, up)
    in_no2, _ = shift(pair.a2, down)
    mo1, t1 = forward_with_tape(model, in_mo1)
    mo2, t2 = forward_with_tape(model, in_mo2)
    no1, t3 = forward_with_tape(model, in_no1)
    no2, t4 = forward_with_tape(model, in_no2)
    value = mse(mo1, mo2) + mse(no1, no2)
    terms = PullTerms(mo1=mo1, mo2=mo2, no1=no1, no2=no2, value=value)
    return terms, PullTape(model, terms, (t1, t2, t3, t4))


def total_step_loss(push, pull, pull_weight=1.0):
    """Scalar objective for one step: push.value + pull_weight * pull.value."""
    return push.value + pull_weight * pull.value
