import numpy as np
import pytest
from scipy.fft import dctn

from ppdn import ImageTensor, NoiseSpec, RngStream, corrupt
from ppdn.degrade import (
    LUMA_QUANT_TABLE,
    JpegSpec,
    ShiftSpec,
    _quantized_table,
    jpeg_compress,
    jpeg_decay,
    shift,
    shift_rows,
)
from ppdn.errors import ImageTooSmallError
from ppdn.synthetic import make_natural_image

from oracles import brute_dct2_block, brute_idct2_block, quality_scaled_table


# ------------------------------------------------------------------- shifting

def test_shift_k0_is_identity():
    img = ImageTensor(np.random.rand(10, 8, 3))
    spec = ShiftSpec(direction=1, max_rows=0, rng=RngStream(0, "shift"))
    out, k = shift(img, spec)
    assert k == 0
    np.testing.assert_array_equal(out.data, img.data)


def test_shift_three_rows_up():
    rows = np.arange(3.0)[:, None, None] * np.ones((1, 4, 1))
    img = ImageTensor(rows / 10.0)
    out = shift_rows(img, 1, direction=1)
    np.testing.assert_array_equal(out.data[:, 0, 0] * 10.0, np.array([1.0, 2.0, 0.0]))


def test_shift_inverse_composition():
    rng = np.random.default_rng(5)
    for _ in range(100):
        h = int(rng.integers(2, 20))
        img = ImageTensor(rng.random((h, 6, 1)))
        k = int(rng.integers(0, 8))
        there = shift_rows(img, k, direction=1)
        back = shift_rows(there, k, direction=-1)
        np.testing.assert_array_equal(back.data, img.data)


def test_shift_preserves_row_multiset():
    img = ImageTensor(np.random.rand(9, 5, 3))
    spec = ShiftSpec(direction=-1, max_rows=5, rng=RngStream(3, "shift"))
    out, k = shift(img, spec)
    rows_in = {tuple(r.ravel()) for r in img.data}
    rows_out = {tuple(r.ravel()) for r in out.data}
    assert rows_in == rows_out


def test_shift_k_distribution_bounds():
    spec = ShiftSpec(direction=1, max_rows=5, rng=RngStream(8, "shift"))
    img = ImageTensor(np.random.rand(12, 4, 1))
    ks = {shift(img, spec)[1] for _ in range(200)}
    assert ks == set(range(6))


def test_shift_batch_matches_per_image():
    batch = ImageTensor(np.random.rand(3, 10, 6, 1))
    out = shift_rows(batch, 2, direction=1)
    for b in range(3):
        single = shift_rows(ImageTensor(batch.data[b]), 2, direction=1)
        np.testing.assert_array_equal(out.data[b], single.data)


def test_shift_spec_validation():
    with pytest.raises(ValueError):
        ShiftSpec(direction=0)
    with pytest.raises(ValueError):
        ShiftSpec(direction=1, max_rows=-1)


# ----------------------------------------------------------------- jpeg decay

def test_jpeg_p1_is_bit_exact_passthrough():
    img = ImageTensor(np.random.rand(16, 24, 3))
    out = jpeg_compress(img, 1.0)
    assert out is img


def test_jpeg_constant_image_within_one_byte_level():
    img = ImageTensor(np.full((16, 16, 1), 0.5))
    for p in (0.999, 0.95, 0.8, 0.5, 0.2, 0.01):
        out = jpeg_compress(img, p)
        assert np.abs(out.data - img.data).max() <= 1.0 / 255.0


def test_jpeg_mse_monotone_in_quality(natural_image):
    hurt80 = np.mean((jpeg_compress(natural_image, 0.80).data - natural_image.data) ** 2)
    hurt95 = np.mean((jpeg_compress(natural_image, 0.95).data - natural_image.data) ** 2)
    assert hurt80 > hurt95 > 0.0


def test_jpeg_too_small():
    with pytest.raises(ImageTooSmallError):
        jpeg_compress(ImageTensor(np.zeros((7, 16, 1))), 0.9)


def test_quality_table_scaling_matches_oracle():
    for p in (0.999, 0.95, 0.9, 0.8, 0.5, 0.3, 0.1, 0.01):
        mine = _quantized_table(p)
        ref = quality_scaled_table(LUMA_QUANT_TABLE.tolist(), p)
        np.testing.assert_array_equal(mine, ref)
    # Q=50 leaves the base table unchanged; Q=100 is all ones
    np.testing.assert_array_equal(_quantized_table(0.5), LUMA_QUANT_TABLE)
    np.testing.assert_array_equal(_quantized_table(1.0 - 1e-9), np.ones((8, 8)))


def test_jpeg_single_block_matches_loop_oracle():
    # one 8x8 gray block, no padding: full pipeline vs explicit-loop DCT
    rng = np.random.default_rng(21)
    block01 = rng.random((8, 8))
    p = 0.85
    table = quality_scaled_table(LUMA_QUANT_TABLE.tolist(), p)
    shifted = block01 * 255.0 - 128.0
    coef = brute_dct2_block(shifted)
    quant = np.round(coef / table) * table
    rec = (brute_idct2_block(quant) + 128.0) / 255.0
    expected = np.clip(rec, 0.0, 1.0)

    out = jpeg_compress(ImageTensor(block01[:, :, None]), p)
    np.testing.assert_allclose(out.data[:, :, 0], expected, atol=1e-9)


def test_jpeg_quantizer_coefficient_properties(natural_image):
    # decoded coefficients are exact table multiples; each moves at most
    # half a step; sub-threshold coefficients are zeroed
    p = 0.8
    table = _quantized_table(p)
    x = np.clip(natural_image.data[:64, :64, 0], 0.0, 1.0)
    out = jpeg_compress(ImageTensor(x[:, :, None]), p).data[:, :, 0]

    def blocks_of(ch):
        b = ch.reshape(8, 8, 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
        return dctn(b * 255.0 - 128.0, type=2, norm="ortho", axes=(-2, -1))

    cin = blocks_of(x)
    # re-derive quantized coefficients from the input independently
    q = np.round(cin / table) * table
    assert np.abs(q - cin).max() <= (table / 2.0 + 1e-9).max()
    zeroed = np.abs(cin) < table / 2.0
    assert np.all(q[zeroed] == 0.0)
    multiples = q / table
    np.testing.assert_allclose(multiples, np.round(multiples), atol=1e-12)
    # and the decoded image matches the independently quantized blocks
    rec = np.clip(
        (np.stack([brute_idct2_block(b) for b in q]) + 128.0) / 255.0, 0.0, 1.0
    )
    mine = out.reshape(8, 8, 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    np.testing.assert_allclose(mine, rec, atol=1e-9)


def test_jpeg_padding_matches_edge_replication():
    rng = np.random.default_rng(4)
    img = np.clip(rng.random((11, 13, 1)), 0, 1)
    p = 0.7
    padded = np.pad(img[:, :, 0], ((0, 5), (0, 3)), mode="edge")
    ref = jpeg_compress(ImageTensor(padded[:, :, None]), p).data[:11, :13, 0]
    out = jpeg_compress(ImageTensor(img), p).data[:, :, 0]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_jpeg_batch_matches_per_image():
    rng = np.random.default_rng(9)
    batch = ImageTensor(rng.random((3, 16, 16, 3)))
    out = jpeg_compress(batch, 0.85)
    for b in range(3):
        single = jpeg_compress(ImageTensor(batch.data[b]), 0.85)
        np.testing.assert_array_equal(out.data[b], single.data)


def test_jpeg_clamps_unclamped_input():
    noisy = ImageTensor(np.random.randn(16, 16, 1) * 0.5 + 0.5, clamped=False)
    out = jpeg_compress(noisy, 0.9)
    assert out.clamped
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_jpeg_decay_draws_quality_in_range():
    spec = JpegSpec(quality_range=(0.8, 0.9), rng=RngStream(2, "jpeg"))
    img = ImageTensor(np.random.rand(16, 16, 1))
    for _ in range(20):
        _, p = jpeg_decay(img, spec)
        assert 0.8 <= p <= 0.9


def test_jpeg_spec_validation():
    with pytest.raises(ValueError):
        JpegSpec(quality_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        JpegSpec(quality_range=(0.9, 0.2))
    with pytest.raises(ValueError):
        JpegSpec(quality_range=(0.5, 1.1))


def test_decay_reduces_variance_of_noisy_observations():
    # statistical ordering Var[decayed] <= Var[observation] on the second
    # observation of the pair (the tensor the push objective decays),
    # >= 95% of 24 images
    from ppdn import make_observation_pair

    gen = RngStream(17, "var")
    wins = 0
    n = 24
    for i in range(n):
        img = make_natural_image(gen.derive(f"i{i}"), 48, 48, channels=1)
        spec = NoiseSpec(sigma=25 / 255, rng=gen.derive(f"n{i}"))
        a2 = make_observation_pair(corrupt(img, spec), spec).a2
        jspec = JpegSpec(quality_range=(0.8, 0.999), rng=gen.derive(f"j{i}"))
        decayed, _ = jpeg_decay(a2, jspec)
        wins += float(np.var(decayed.data)) <= float(np.var(a2.data))
    assert wins / n >= 0.95
