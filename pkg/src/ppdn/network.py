"""DnCNN-style convolutional denoiser with reverse-mode autodiff.

The network is conv+ReLU, then (depth-2) blocks of conv+BN+ReLU, then a
final conv, all 3x3 stride-1 zero-padded, predicting the image directly.
Parameters live in one flat float32 vector with a deterministic layout
(trainable entries first, then batch-norm running statistics), which is
also the on-disk checkpoint order. All arithmetic runs in float64 so that
analytic gradients match finite differences tightly; float32 is only the
storage dtype.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidArchError,
    LengthMismatchError,
    ShapeMismatchError,
    StaleTapeError,
)

KERNEL = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters. Kernel size is fixed at 3x3."""

    depth: int = 17
    width: int = 64
    in_channels: int = 3
    out_channels: int = 3
    use_batch_norm: bool = True

    def __post_init__(self):
        if self.depth < 3:
            raise InvalidArchError(f"depth must be >= 3, got {self.depth}")
        if self.width < 1:
            raise InvalidArchError(f"width must be >= 1, got {self.width}")
        if self.in_channels not in (1, 3) or self.out_channels not in (1, 3):
            raise InvalidArchError("channels must be 1 or 3")

    @property
    def kernel(self):
        return KERNEL


class ParamLayout:
    """Deterministic name -> (offset, shape) map over the flat vector.

    Order: for each layer, conv weights (3, 3, cin, cout) then bias, plus
    gamma and beta for batch-normed middle layers; after all trainable
    entries come running_mean/running_var per middle layer.
    """

    def __init__(self, arch):
        self.arch = arch
        self.entries = {}
        offset = 0

        def add(name, shape):
            nonlocal offset
            size = int(np.prod(shape))
            self.entries[name] = (offset, shape)
            offset += size

        for layer in range(1, arch.depth + 1):
            cin = arch.in_channels if layer == 1 else arch.width
            cout = arch.out_channels if layer == arch.depth else arch.width
            add(f"conv{layer}.w", (KERNEL, KERNEL, cin, cout))
            add(f"conv{layer}.b", (cout,))
            if 1 < layer < arch.depth and arch.use_batch_norm:
                add(f"bn{layer}.gamma", (arch.width,))
                add(f"bn{layer}.beta", (arch.width,))
        self.trainable_size = offset
        if arch.use_batch_norm:
            for layer in range(2, arch.depth):
                add(f"bn{layer}.running_mean", (arch.width,))
                add(f"bn{layer}.running_var", (arch.width,))
        self.total_size = offset

    def slice_of(self, name):
        offset, shape = self.entries[name]
        return slice(offset, offset + int(np.prod(shape))), shape


class DenoiserModel:
    """Flat-parameter denoising network.

    ``params`` is the single source of truth (float32). ``version`` is
    bumped by apply_update so gradient tapes can detect staleness.
    """

    def __init__(self, arch, params, train_mode=True):
        self.arch = arch
        self.layout = ParamLayout(arch)
        params = np.asarray(params, dtype=np.float32)
        if params.shape != (self.layout.total_size,):
            raise LengthMismatchError(
                f"params length {params.shape} != layout {self.layout.total_size}"
            )
        self.params = params
        self.train_mode = train_mode
        self.version = 0

    @property
    def n_params(self):
        return self.layout.total_size

    def view(self, name):
        """Writable float32 view of one named entry."""
        sl, shape = self.layout.slice_of(name)
        return self.params[sl].reshape(shape)

    def value(self, name):
        """Float64 copy of one named entry (for compute)."""
        return self.view(name).astype(np.float64)

    def copy(self):
        m = DenoiserModel(self.arch, self.params.copy(), train_mode=self.train_mode)
        m.version = self.version
        return m


def init(arch, rng):
    """He-style initialization: conv weights ~ N(0, 2/fan_in), biases zero,
    BN scale 1 / offset 0, running stats (0, 1). Deterministic per stream."""
    layout = ParamLayout(arch)
    params = np.zeros(layout.total_size, dtype=np.float32)
    model = DenoiserModel(arch, params)
    for layer in range(1, arch.depth + 1):
        w = model.view(f"conv{layer}.w")
        fan_in = KERNEL * KERNEL * w.shape[2]
        std = np.sqrt(2.0 / fan_in)
        w[...] = rng.normal(0.0, std, size=w.shape).astype(np.float32)
        if 1 < layer < arch.depth and arch.use_batch_norm:
            model.view(f"bn{layer}.gamma")[...] = 1.0
            model.view(f"bn{layer}.running_var")[...] = 1.0
    return model


@dataclass
class GradientTape:
    """Recorded activations from one forward pass, enough for backward."""

    model_id: int
    params_version: int
    train: bool
    records: list = field(default_factory=list)

    def check(self, model):
        if self.model_id != id(model) or self.params_version != model.version:
            raise StaleTapeError("tape does not match the model's current parameters")


def _as_batch(batch, arch):
    data = batch.data if hasattr(batch, "data") else np.asarray(batch)
    if data.ndim != 4:
        raise ShapeMismatchError(f"forward expects a (B, H, W, C) batch, got {data.shape}")
    if data.shape[-1] != arch.in_channels:
        raise ShapeMismatchError(
            f"batch has {data.shape[-1]} channels, arch expects {arch.in_channels}"
        )
    return np.asarray(data, dtype=np.float64)


def _pad(x):
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c))
    xp[:, 1 : h + 1, 1 : w + 1, :] = x
    return xp


def _conv_forward(x, w, b):
    # Nine broadcasted matmuls (B, H, W, Ci) @ (Ci, Co), one per tap.
    bsz, h, wd, _ = x.shape
    xp = _pad(x)
    acc = None
    for i in range(KERNEL):
        for j in range(KERNEL):
            term = xp[:, i : i + h, j : j + wd, :] @ w[i, j]
            acc = term if acc is None else acc + term
    return acc + b


def _conv_backward(x, w, dy):
    bsz, h, wd, ci = x.shape
    co = w.shape[3]
    xp = _pad(x)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    dyf = np.ascontiguousarray(dy).reshape(-1, co)
    for i in range(KERNEL):
        for j in range(KERNEL):
            sl = np.ascontiguousarray(xp[:, i : i + h, j : j + wd, :]).reshape(-1, ci)
            dw[i, j] = sl.T @ dyf
            dxp[:, i : i + h, j : j + wd, :] += dy @ w[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    return dw, db, dxp[:, 1 : h + 1, 1 : wd + 1, :]


def forward(model, batch, train=None, tape=None):
    """Run the network on a (B, H, W, C) batch; returns (B, H, W, C_out).

    In train mode batch-norm uses batch statistics and updates the running
    statistics stored in the parameter vector (the one forward-pass side
    effect); in eval mode it uses the stored running statistics and the
    pass is fully deterministic.
    """
    train = model.train_mode if train is None else train
    x = _as_batch(batch, model.arch)
    arch = model.arch
    for layer in range(1, arch.depth + 1):
        w = model.value(f"conv{layer}.w")
        b = model.value(f"conv{layer}.b")
        z = _conv_forward(x, w, b)
        rec = {"layer": layer, "x": x}
        if layer == arch.depth:
            if tape is not None:
                tape.records.append(rec)
            x = z
            break
        if 1 < layer < arch.depth and arch.use_batch_norm:
            gamma = model.value(f"bn{layer}.gamma")
            beta = model.value(f"bn{layer}.beta")
            if train:
                mu = z.mean(axis=(0, 1, 2))
                var = z.var(axis=(0, 1, 2))
                rm = model.view(f"bn{layer}.running_mean")
                rv = model.view(f"bn{layer}.running_var")
                rm[...] = (BN_MOMENTUM * rm + (1.0 - BN_MOMENTUM) * mu).astype(np.float32)
                rv[...] = (BN_MOMENTUM * rv + (1.0 - BN_MOMENTUM) * var).astype(np.float32)
            else:
                mu = model.value(f"bn{layer}.running_mean")
                var = model.value(f"bn{layer}.running_var")
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv
            z = gamma * xhat + beta
            rec.update(xhat=xhat, inv=inv, gamma=gamma, bn_train=train)
        mask = z > 0
        z = np.where(mask, z, 0.0)
        rec["mask"] = mask
        if tape is not None:
            tape.records.append(rec)
        x = z
    return x


def forward_with_tape(model, batch, train=None):
    """forward() that also records a GradientTape for backward()."""
    tape = GradientTape(
        model_id=id(model),
        params_version=model.version,
        train=model.train_mode if train is None else train,
    )
    y = forward(model, batch, train=train, tape=tape)
    return y, tape


def backward(model, tape, loss_grad, with_input_grad=False):
    """Exact reverse-mode gradient of the taped pass w.r.t. all parameters.

    loss_grad is dLoss/dOutput with the output's shape. Returns a float64
    vector aligned with the parameter layout (running-statistic entries get
    zero gradient); with with_input_grad=True also returns dLoss/dInput so
    passes can be chained through network compositions.
    """
    tape.check(model)
    arch = model.arch
    grads = np.zeros(model.layout.total_size)
    dy = np.asarray(loss_grad, dtype=np.float64)
    if not tape.records:
        raise StaleTapeError("tape has no records")

    def put(name, g):
        sl, shape = model.layout.slice_of(name)
        grads[sl] = g.ravel()

    for rec in reversed(tape.records):
        layer = rec["layer"]
        if layer != arch.depth:
            dy = np.where(rec["mask"], dy, 0.0)
            if "xhat" in rec:
                xhat, inv, gamma = rec["xhat"], rec["inv"], rec["gamma"]
                put(f"bn{layer}.gamma", (dy * xhat).sum(axis=(0, 1, 2)))
                put(f"bn{layer}.beta", dy.sum(axis=(0, 1, 2)))
                dxhat = dy * gamma
                if rec["bn_train"]:
                    n = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
                    dy = (
                        inv
                        / n
                        * (
                            n * dxhat
                            - dxhat.sum(axis=(0, 1, 2))
                            - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
                        )
                    )
                else:
                    dy = dxhat * inv
        w = model.value(f"conv{layer}.w")
        dw, db, dx = _conv_backward(rec["x"], w, dy)
        put(f"conv{layer}.w", dw)
        put(f"conv{layer}.b", db)
        dy = dx
    if with_input_grad:
        return grads, dy
    return grads


@dataclass
class AdamState:
    """Adam moments, aligned with the flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model):
        n = model.n_params
        return cls(m=np.zeros(n), v=np.zeros(n))


def apply_update(model, grads, opt_state, lr):
    """One in-place Adam step. Returns (model, opt_state).

    Entries with permanently zero gradient (the running statistics) keep
    zero moments and are therefore never moved by the optimizer.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (model.n_params,):
        raise LengthMismatchError(
            f"gradient length {grads.shape} != params {model.n_params}"
        )
    if opt_state.m.shape != grads.shape:
        raise LengthMismatchError("optimizer state length mismatch")
    s = opt_state
    s.t += 1
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads * grads
    mhat = s.m / (1.0 - s.beta1**s.t)
    vhat = s.v / (1.0 - s.beta2**s.t)
    step = lr * mhat / (np.sqrt(vhat) + s.eps)
    model.params[...] = (model.params.astype(np.float64) - step).astype(np.float32)
    model.version += 1
    return model, s
