"""Training loop: sampling, pair generation, losses, optimization, telemetry.

One step processes one batch of clean patches: corrupt once to get the
working noisy batch, build the observation pair, compute push and pull,
and update the model. Noise, augmentation, and degradation draws are all
fresh per epoch/step. Everything is driven by named RNG streams from the
config seed, so a (config, seed) pair pins the entire loss trajectory and
the final checkpoint bit-for-bit.
"""

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import save_checkpoint
from .degrade import DOWN, JpegSpec, ShiftSpec, UP, jpeg_decay, shift
from .errors import ConfigError, DivergedLossError, EmptyDatasetError, ShapeMismatchError
from .image import ImageTensor, augment, extract_patches, load_image
from .losses import mse, pull_loss, push_loss
from .network import (
    AdamState,
    ArchConfig,
    DenoiserModel,
    apply_update,
    backward,
    forward,
    forward_with_tape,
    init,
)
from .noise import GAUSSIAN, NoiseSpec, corrupt, make_observation_pair
from .rng import RngStream

TELEMETRY_HEADER = "step,epoch,push_loss,pull_loss,total,lr"
LOSS_HISTORY_LEN = 1000

UPDATE_COMBINED = "combined"
UPDATE_FOUR_STEP = "four-step"


@dataclass
class TrainConfig:
    """Flat training configuration; mirrors the `key = value` config file."""

    epochs: int = 400
    batch_size: int = 16
    patch_size: int = 40
    stride: int = 0  # 0 means patch_size
    lr_initial: float = 1e-3
    lr_schedule: tuple = None  # ((epoch, mult), ...); None derives default; () is flat
    noise_family: str = GAUSSIAN
    sigma: float = 25.0 / 255.0
    lambda_range: tuple = (5.0, 50.0)
    shift_max_rows: int = 5
    jpeg_quality: tuple = (0.8, 1.0)
    pull_weight: float = 1.0
    seed: int = 0
    update_mode: str = UPDATE_COMBINED
    detach_inner: bool = False
    depth: int = 17
    width: int = 64
    channels: int = 3
    use_batch_norm: bool = True
    augment: bool = True
    checkpoint_every: int = 25

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_initial <= 0:
            raise ConfigError("lr_initial must be > 0")
        if self.update_mode not in (UPDATE_COMBINED, UPDATE_FOUR_STEP):
            raise ConfigError(f"unknown update_mode {self.update_mode!r}")

    def arch(self):
        return ArchConfig(
            depth=self.depth,
            width=self.width,
            in_channels=self.channels,
            out_channels=self.channels,
            use_batch_norm=self.use_batch_norm,
        )

    def noise_spec(self, rng):
        return NoiseSpec(
            family=self.noise_family,
            sigma=self.sigma,
            lambda_range=self.lambda_range,
            rng=rng,
        )

    def effective_schedule(self):
        """Step-decay boundaries. None derives the default (halve at 1/4,
        1/2, 3/4 of the run); an explicit empty schedule means no decay."""
        if self.lr_schedule is not None:
            return tuple(self.lr_schedule)
        marks = sorted({max(1, round(self.epochs * f)) for f in (0.25, 0.5, 0.75)})
        return tuple((m, 0.5) for m in marks if 1 < m <= self.epochs)

    def lr_at(self, epoch):
        lr = self.lr_initial
        for boundary, mult in self.effective_schedule():
            if epoch >= boundary:
                lr *= mult
        return lr


_TUPLE_FIELDS = {"lambda_range", "jpeg_quality"}
_BOOL_FIELDS = {"detach_inner", "use_batch_norm", "augment"}


def _parse_value(key, raw, target_type):
    raw = raw.strip()
    if key == "lr_schedule":
        if raw.lower() in ("", "none", "flat"):
            return ()
        if raw.lower() == "default":
            return None
        pairs = []
        for item in raw.split(","):
            ep, mult = item.split(":")
            pairs.append((int(ep), float(mult)))
        return tuple(pairs)
    if key in _TUPLE_FIELDS:
        parts = [float(v) for v in raw.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"{key} needs two comma-separated values")
        return tuple(parts)
    if key in _BOOL_FIELDS:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_config(path=None, text=None, overrides=(), seen=None):
    """Build a TrainConfig from `key = value` lines plus overrides.

    Lines starting with # and blank lines are ignored. Overrides are
    (key, value) string pairs and take precedence over file values. If
    ``seen`` is a set, the keys that were explicitly assigned are added
    to it.
    """
    defaults = TrainConfig()
    fields = {f: type(getattr(defaults, f)) for f in defaults.__dataclass_fields__}
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            text = fh.read()
    if text is not None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(key, raw, fields[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    for key, raw in overrides:
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _parse_value(key, raw, fields[key])
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    if seen is not None:
        seen.update(values)
    try:
        return TrainConfig(**values)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def format_config(config):
    """Render a TrainConfig back into config-file syntax."""
    lines = []
    for key, value in asdict(config).items():
        if key == "lr_schedule":
            if value is None:
                value = "default"
            else:
                value = ",".join(f"{e}:{m:g}" for e, m in value) or "flat"
        elif isinstance(value, tuple):
            value = ",".join(f"{v:g}" for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines)


@dataclass
class TrainState:
    """Everything needed to resume a run and reproduce its continuation."""

    epoch: int = 0
    step: int = 0
    opt: AdamState = None
    rng_states: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    best_psnr: float = float("nan")


def _load_training_patches(train_dir, config, rng):
    names = sorted(f for f in os.listdir(train_dir) if f.lower().endswith(".png"))
    images = []
    for i, name in enumerate(names):
        img = load_image(os.path.join(train_dir, name))
        if img.channels != config.channels:
            raise ShapeMismatchError(
                f"{name}: {img.channels} channels, config wants {config.channels}"
            )
        images.append((i, img))
    if not images:
        raise EmptyDatasetError(f"no PNG images in {train_dir}")
    stride = config.stride or config.patch_size
    all_patches = []
    for image_id, img in images:
        pset = extract_patches(img, config.patch_size, stride, rng, image_id=image_id)
        all_patches.extend(pset.patches)
    return all_patches


def _streams(config):
    seed = config.seed
    return {
        "noise": RngStream(seed, "noise"),
        "shift": RngStream(seed, "shift"),
        "jpeg": RngStream(seed, "jpeg"),
        "init": RngStream(seed, "init"),
        "batch-order": RngStream(seed, "batch-order"),
    }


def save_train_state(path, model, state, config):
    """Persist model + optimizer + stream states for exact resumption."""
    np.savez(
        path,
        params=model.params,
        adam_m=state.opt.m,
        adam_v=state.opt.v,
        adam_t=np.int64(state.opt.t),
        epoch=np.int64(state.epoch),
        step=np.int64(state.step),
        rng_json=json.dumps(state.rng_states),
        loss_history=np.asarray(state.loss_history, dtype=np.float64),
        config_json=json.dumps(asdict(config)),
        best_psnr=np.float64(state.best_psnr),
    )


def load_train_state(path, config):
    """Rebuild (model, TrainState) from a saved state file."""
    with np.load(path, allow_pickle=False) as data:
        saved = json.dumps(json.loads(str(data["config_json"])), sort_keys=True)
        current = json.dumps(json.loads(json.dumps(asdict(config))), sort_keys=True)
        if saved != current:
            raise ConfigError("saved train state was produced by a different config")
        model = DenoiserModel(config.arch(), data["params"].copy(), train_mode=True)
        opt = AdamState(m=data["adam_m"].copy(), v=data["adam_v"].copy(), t=int(data["adam_t"]))
        state = TrainState(
            epoch=int(data["epoch"]),
            step=int(data["step"]),
            opt=opt,
            rng_states=json.loads(str(data["rng_json"])),
            loss_history=[tuple(row) for row in data["loss_history"].tolist()],
            best_psnr=float(data["best_psnr"]),
        )
    return model, state


def _assemble_batch(patches, indices, config, order_rng):
    arrays = []
    for idx in indices:
        patch = patches[idx]
        if config.augment:
            patch = augment(patch, order_rng)
        arrays.append(patch.data)
    return ImageTensor(np.stack(arrays, axis=0), clamped=True)


def train(
    config,
    train_dir,
    model_out,
    progress_sink=None,
    telemetry_path=None,
    resume_from=None,
):
    """Run the full push-pull training loop and write checkpoints.

    Writes the final checkpoint to model_out, periodic checkpoints to
    model_out + ".ep<N>" every config.checkpoint_every epochs, a resume
    state next to each checkpoint (".state.npz"), and per-step telemetry
    CSV. progress_sink, if given, receives one dict per step.
    """
    streams = _streams(config)
    patches = _load_training_patches(train_dir, config, streams["batch-order"])
    n_patches = len(patches)
    steps_per_epoch = -(-n_patches // config.batch_size)  # ceil

    if resume_from is not None:
        model, state = load_train_state(resume_from, config)
        for name, saved in state.rng_states.items():
            streams[name].state = saved
    else:
        model = init(config.arch(), streams["init"])
        state = TrainState(opt=AdamState.for_model(model))
    model.train_mode = True

    noise = config.noise_spec(streams["noise"])
    shift_spec = ShiftSpec(direction=UP, max_rows=config.shift_max_rows, rng=streams["shift"])
    jpeg_spec = JpegSpec(quality_range=config.jpeg_quality, rng=streams["jpeg"])

    if telemetry_path is None:
        telemetry_path = str(model_out) + ".telemetry.csv"
    telemetry_mode = "a" if resume_from is not None and os.path.exists(telemetry_path) else "w"

    def snapshot_state():
        state.rng_states = {name: s.state for name, s in streams.items()}

    def record(rows_fh, epoch, push_value, pull_value, lr):
        total = push_value + config.pull_weight * pull_value
        if not np.isfinite(total):
            raise DivergedLossError(
                f"non-finite loss at step {state.step} (epoch {epoch}): "
                f"push={push_value} pull={pull_value}"
            )
        rows_fh.write(
            f"{state.step},{epoch},{push_value:.8f},{pull_value:.8f},{total:.8f},{lr:.8g}\n"
        )
        state.loss_history.append((state.step, epoch, push_value, pull_value, total))
        if len(state.loss_history) > LOSS_HISTORY_LEN:
            del state.loss_history[: -LOSS_HISTORY_LEN]
        if progress_sink is not None:
            progress_sink(
                {
                    "step": state.step,
                    "epoch": epoch,
                    "push_loss": push_value,
                    "pull_loss": pull_value,
                    "total": total,
                    "lr": lr,
                }
            )

    with open(telemetry_path, telemetry_mode) as rows_fh:
        if telemetry_mode == "w":
            rows_fh.write(TELEMETRY_HEADER + "\n")
        for epoch in range(state.epoch + 1, config.epochs + 1):
            lr = config.lr_at(epoch)
            order = streams["batch-order"].permutation(n_patches)
            for start in range(0, n_patches, config.batch_size):
                indices = order[start : start + config.batch_size]
                clean = _assemble_batch(patches, indices, config, streams["batch-order"])
                noisy = corrupt(clean, noise)
                pair = make_observation_pair(noisy, noise)
                if config.update_mode == UPDATE_COMBINED:
                    push_terms, push_tape = push_loss(
                        model, pair, shift_spec, jpeg_spec, detach_inner=config.detach_inner
                    )
                    pull_terms, pull_tape = pull_loss(model, pair, shift_spec)
                    grads = push_tape.param_grads()
                    grads += config.pull_weight * pull_tape.param_grads()
                    apply_update(model, grads, state.opt, lr)
                    push_value, pull_value = push_terms.value, pull_terms.value
                else:
                    push_value, pull_value = _four_step_update(
                        model, state.opt, lr, config, pair, shift_spec, jpeg_spec
                    )
                state.step += 1
                record(rows_fh, epoch, push_value, pull_value, lr)
            state.epoch = epoch
            if config.checkpoint_every and epoch % config.checkpoint_every == 0 and epoch < config.epochs:
                snapshot_state()
                save_checkpoint(f"{model_out}.ep{epoch}", model)
                save_train_state(f"{model_out}.ep{epoch}.state.npz", model, state, config)
        snapshot_state()
        save_checkpoint(model_out, model)
        save_train_state(f"{model_out}.state.npz", model, state, config)
    return model


def _four_step_update(model, opt, lr, config, pair, shift_spec, jpeg_spec):
    """Compatibility mode: one parameter update per loss term.

    Term order: shift-target push, composed JPEG-target push, then the two
    pull pairs. Each term recomputes its forward passes against the
    freshly updated parameters.
    """
    # Term 1: f(a1) toward the shifted second observation.
    b1_img, _ = shift(pair.a2, replace(shift_spec, direction=UP))
    d1, tape = forward_with_tape(model, pair.a1)
    term1 = mse(d1, b1_img.data)
    grads = backward(model, tape, 2.0 * (d1 - b1_img.data) / d1.size)
    apply_update(model, grads, opt, lr)

    # Term 2: f(f(a1)) toward the JPEG-decayed second observation.
    b2_img, _ = jpeg_decay(pair.a2, jpeg_spec)
    d1, tape1 = forward_with_tape(model, pair.a1)
    d2, tape2 = forward_with_tape(model, d1)
    term2 = mse(d2, b2_img.data)
    g2 = 2.0 * (d2 - b2_img.data) / d2.size
    grads, dd1 = backward(model, tape2, g2, with_input_grad=True)
    if not config.detach_inner:
        grads += backward(model, tape1, dd1)
    apply_update(model, grads, opt, lr)

    # Terms 3 and 4: the two pull pairs.
    pull_value = 0.0
    for obs in (pair.a1, pair.a2):
        up_img, _ = shift(obs, replace(shift_spec, direction=UP))
        down_img, _ = shift(obs, replace(shift_spec, direction=DOWN))
        o1, t1 = forward_with_tape(model, up_img)
        o2, t2 = forward_with_tape(model, down_img)
        term = mse(o1, o2)
        pull_value += term
        d = 2.0 * (o1 - o2) / o1.size
        grads = backward(model, t1, d)
        grads += backward(model, t2, -d)
        apply_update(model, config.pull_weight * grads, opt, lr)

    return term1 + term2, pull_value


def denoise(model, noisy, two_pass=False):
    """Single deterministic forward pass (eval mode), clamped to [0, 1].

    two_pass applies the network twice before clamping, matching the
    composed application the push objective trains.
    """
    data = noisy.data if isinstance(noisy, ImageTensor) else np.asarray(noisy)
    single = data.ndim == 3
    if single:
        data = data[None]
    out = forward(model, data, train=False)
    if two_pass:
        out = forward(model, out, train=False)
    out = np.clip(out, 0.0, 1.0)
    if single:
        out = out[0]
    return ImageTensor(out, clamped=True)
