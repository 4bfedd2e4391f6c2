import numpy as np
import pytest

from ppdn import RngStream
from ppdn.errors import InvalidArchError, LengthMismatchError, ShapeMismatchError, StaleTapeError
from ppdn.network import (
    AdamState,
    ArchConfig,
    DenoiserModel,
    ParamLayout,
    apply_update,
    backward,
    forward,
    forward_with_tape,
    init,
)

from oracles import finite_difference_gradients, gradcheck_rel_errors


def tiny_arch(**kw):
    defaults = dict(depth=3, width=3, in_channels=1, out_channels=1)
    defaults.update(kw)
    return ArchConfig(**defaults)


# ------------------------------------------------------------------ layout/init

def test_param_count_matches_enumeration():
    # depth 3, width 4, 1 channel: counted layer by layer by hand
    arch = ArchConfig(depth=3, width=4, in_channels=1, out_channels=1)
    first = 3 * 3 * 1 * 4 + 4
    middle = 3 * 3 * 4 * 4 + 4 + 2 * 4 + 2 * 4  # conv w+b, gamma/beta, running m/v
    last = 3 * 3 * 4 * 1 + 1
    assert ParamLayout(arch).total_size == first + middle + last == 241


def test_param_count_general_enumeration():
    # independent enumeration for a deeper arch
    arch = ArchConfig(depth=5, width=6, in_channels=3, out_channels=3)
    expected = 0
    expected += 3 * 3 * 3 * 6 + 6
    for _ in range(3):  # middle layers
        expected += 3 * 3 * 6 * 6 + 6 + 2 * 6 + 2 * 6
    expected += 3 * 3 * 6 * 3 + 3
    assert ParamLayout(arch).total_size == expected


def test_init_deterministic_per_seed():
    a = init(tiny_arch(), RngStream(5, "init"))
    b = init(tiny_arch(), RngStream(5, "init"))
    c = init(tiny_arch(), RngStream(6, "init"))
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


def test_init_bn_defaults():
    m = init(tiny_arch(), RngStream(0, "init"))
    assert np.all(m.view("bn2.gamma") == 1.0)
    assert np.all(m.view("bn2.beta") == 0.0)
    assert np.all(m.view("bn2.running_mean") == 0.0)
    assert np.all(m.view("bn2.running_var") == 1.0)
    assert np.all(m.view("conv1.b") == 0.0)


def test_invalid_arch():
    with pytest.raises(InvalidArchError):
        ArchConfig(depth=2)
    with pytest.raises(InvalidArchError):
        ArchConfig(depth=0)
    with pytest.raises(InvalidArchError):
        ArchConfig(in_channels=2)


# -------------------------------------------------------------------- forward

def test_zero_params_give_zero_output():
    arch = tiny_arch()
    m = DenoiserModel(arch, np.zeros(ParamLayout(arch).total_size, dtype=np.float32))
    x = np.random.rand(2, 6, 6, 1)
    for train in (True, False):
        np.testing.assert_array_equal(forward(m, x, train=train), np.zeros_like(x))


def test_output_shape_matches_input():
    m = init(tiny_arch(in_channels=3, out_channels=3), RngStream(1, "init"))
    for h, w in ((1, 1), (1, 7), (5, 3), (16, 16)):
        x = np.random.rand(2, h, w, 3)
        assert forward(m, x, train=False).shape == x.shape


def test_forward_finite_on_random_batches():
    m = init(ArchConfig(depth=6, width=8, in_channels=3, out_channels=3), RngStream(2, "init"))
    x = np.random.rand(4, 12, 12, 3)
    for train in (True, False):
        y = forward(m, x, train=train)
        assert np.all(np.isfinite(y))


def test_forward_channel_mismatch():
    m = init(tiny_arch(), RngStream(0, "init"))
    with pytest.raises(ShapeMismatchError):
        forward(m, np.zeros((1, 8, 8, 3)), train=False)
    with pytest.raises(ShapeMismatchError):
        forward(m, np.zeros((8, 8, 1)), train=False)


def test_eval_forward_is_deterministic_and_pure():
    m = init(tiny_arch(), RngStream(3, "init"))
    m.train_mode = False
    before = m.params.copy()
    x = np.random.rand(2, 8, 8, 1)
    y1 = forward(m, x)
    y2 = forward(m, x)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(m.params, before)


def test_train_forward_updates_running_stats_only():
    m = init(tiny_arch(), RngStream(3, "init"))
    before = m.params.copy()
    layout = m.layout
    x = np.random.rand(2, 8, 8, 1)
    forward(m, x, train=True)
    sl_mean, _ = layout.slice_of("bn2.running_mean")
    sl_var, _ = layout.slice_of("bn2.running_var")
    changed = m.params != before
    expected = np.zeros_like(changed)
    expected[sl_mean] = True
    expected[sl_var] = True
    assert np.array_equal(np.nonzero(changed)[0], np.nonzero(expected)[0])


# ------------------------------------------------------------------- gradients

def _mse_loss_eval(arch, x, target, train):
    def loss_eval(params):
        m = DenoiserModel(arch, params.copy(), train_mode=train)
        y, tape = forward_with_tape(m, x, train=train)
        masks = [r["mask"] for r in tape.records if "mask" in r]
        return float(np.mean((y - target) ** 2)), masks

    return loss_eval


@pytest.mark.parametrize("use_bn,train", [(False, False), (True, True), (True, False)])
def test_gradient_matches_finite_differences_single_pass(use_bn, train):
    arch = ArchConfig(depth=3, width=3, in_channels=1, out_channels=1, use_batch_norm=use_bn)
    rng = RngStream(7, "init")
    model = init(arch, rng)
    data = RngStream(7, "data")
    x = data.uniform(0, 1, size=(2, 6, 6, 1))
    target = data.uniform(0, 1, size=(2, 6, 6, 1))

    m = DenoiserModel(arch, model.params.copy(), train_mode=train)
    y, tape = forward_with_tape(m, x, train=train)
    g = backward(m, tape, 2.0 * (y - target) / y.size)

    loss_eval = _mse_loss_eval(arch, x, target, train)
    fd, usable = finite_difference_gradients(loss_eval, model.params.copy())
    # the trainable segment is what the optimizer consumes; in eval mode the
    # loss also depends on the (deliberately zero-gradient) running stats
    nt = m.layout.trainable_size
    rel = gradcheck_rel_errors(g[:nt], fd[:nt], usable[:nt])
    assert usable[:nt].mean() > 0.9
    assert rel[usable[:nt]].max() < 1e-3


def test_gradient_one_pixel_model():
    # 1x1 image, depth-3 width-2 model: every parameter checked, no filter.
    # Biases get a small jitter so no preactivation sits exactly on the
    # ReLU kink (zero-initialized biases put dead units precisely at 0).
    arch = ArchConfig(depth=3, width=2, in_channels=1, out_channels=1, use_batch_norm=False)
    model = init(arch, RngStream(11, "init"))
    jitter = RngStream(11, "jitter").normal(0.05, 0.02, size=model.n_params)
    model.params[...] = (model.params.astype(np.float64) + jitter).astype(np.float32)
    x = np.array([[[[0.7]]]])
    target = np.array([[[[0.2]]]])

    m = DenoiserModel(arch, model.params.copy(), train_mode=False)
    y, tape = forward_with_tape(m, x, train=False)
    g = backward(m, tape, 2.0 * (y - target) / y.size)

    fd, usable = finite_difference_gradients(
        _mse_loss_eval(arch, x, target, False), model.params.copy()
    )
    assert usable.all()
    rel = gradcheck_rel_errors(g, fd, usable)
    assert rel.max() < 1e-3


def test_gradient_through_composition():
    # loss ||f(f(x)) - t||^2: gradients must accumulate through both
    # applications of the shared parameters
    arch = ArchConfig(depth=3, width=2, in_channels=1, out_channels=1, use_batch_norm=False)
    model = init(arch, RngStream(13, "init"))
    data = RngStream(13, "data")
    x = data.uniform(0, 1, size=(1, 5, 5, 1))
    target = data.uniform(0, 1, size=(1, 5, 5, 1))

    def loss_eval(params):
        m = DenoiserModel(arch, params.copy(), train_mode=False)
        y1, t1 = forward_with_tape(m, x, train=False)
        y2, t2 = forward_with_tape(m, y1, train=False)
        masks = [r["mask"] for tp in (t1, t2) for r in tp.records if "mask" in r]
        return float(np.mean((y2 - target) ** 2)), masks

    m = DenoiserModel(arch, model.params.copy(), train_mode=False)
    y1, t1 = forward_with_tape(m, x, train=False)
    y2, t2 = forward_with_tape(m, y1, train=False)
    g2, dy1 = backward(m, t2, 2.0 * (y2 - target) / y2.size, with_input_grad=True)
    g = g2 + backward(m, t1, dy1)

    fd, usable = finite_difference_gradients(loss_eval, model.params.copy())
    rel = gradcheck_rel_errors(g, fd, usable)
    assert usable.mean() > 0.9
    assert rel[usable].max() < 1e-3


def test_zero_loss_grad_gives_zero_gradient():
    m = init(tiny_arch(), RngStream(1, "init"))
    x = np.random.rand(2, 6, 6, 1)
    y, tape = forward_with_tape(m, x, train=True)
    g = backward(m, tape, np.zeros_like(y))
    assert np.all(g == 0.0)


def test_stale_tape_detected():
    m = init(tiny_arch(), RngStream(1, "init"))
    x = np.random.rand(1, 6, 6, 1)
    y, tape = forward_with_tape(m, x, train=True)
    apply_update(m, np.zeros(m.n_params), AdamState.for_model(m), lr=0.1)
    with pytest.raises(StaleTapeError):
        backward(m, tape, np.zeros_like(y))


# ----------------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    m = init(tiny_arch(), RngStream(2, "init"))
    st = AdamState.for_model(m)
    before = m.params.copy()
    apply_update(m, np.zeros(m.n_params), st, lr=0.5)
    np.testing.assert_array_equal(m.params, before)
    assert st.t == 1


def test_adam_zero_lr_keeps_params():
    m = init(tiny_arch(), RngStream(2, "init"))
    st = AdamState.for_model(m)
    before = m.params.copy()
    apply_update(m, np.random.randn(m.n_params), st, lr=0.0)
    np.testing.assert_array_equal(m.params, before)


def test_adam_scalar_quadratic_step():
    # f(w) = w^2 from w = 1, lr = 0.1: first step moves by
    # lr * g / (|g| * sqrt(1/(1-b2)) ... ) == lr / (1 + eps') ~ 0.1
    arch = tiny_arch()
    layout = ParamLayout(arch)
    params = np.zeros(layout.total_size, dtype=np.float32)
    m = DenoiserModel(arch, params)
    i = 0  # treat one coordinate as the scalar w
    m.params[i] = 1.0
    st = AdamState.for_model(m)
    grads = np.zeros(m.n_params)
    grads[i] = 2.0 * m.params[i]
    apply_update(m, grads, st, lr=0.1)
    w = float(m.params[i])
    # |step| <= lr for the first Adam step (up to float32 storage rounding)
    assert abs(w - 1.0) <= 0.1 + 1e-6
    assert w == pytest.approx(0.9, abs=1e-6)
    assert w < 1.0


def test_adam_length_mismatch():
    m = init(tiny_arch(), RngStream(2, "init"))
    with pytest.raises(LengthMismatchError):
        apply_update(m, np.zeros(m.n_params + 1), AdamState.for_model(m), lr=0.1)
