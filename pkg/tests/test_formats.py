from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lqer.errors import ArgumentError, ShapeError
from lqer.formats import (
    QuantConfig,
    activation_config,
    avg_bitwidth,
    avg_bitwidth_exact,
    dequantize_matrix,
    element_error_bound,
    int_group_dequantize,
    int_group_quantize,
    mxint_dequantize_block,
    mxint_quantize_block,
    overhead_fraction,
    quantize_matrix,
    weight_config,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
CONFIGS = [
    weight_config(4),
    weight_config(2),
    activation_config(8),
    QuantConfig("mxint", 3, 2, 5, "row"),
    QuantConfig("int", 4, 4, 128, "col"),
    QuantConfig("int", 2, 4, 3, "row"),
    QuantConfig("int", 8, 4, 16, "col"),
]


def test_config_validation():
    with pytest.raises(ArgumentError):
        QuantConfig("fp8")
    with pytest.raises(ArgumentError):
        QuantConfig(mantissa_bits=1)
    with pytest.raises(ArgumentError):
        QuantConfig(exponent_bits=9)
    with pytest.raises(ArgumentError):
        QuantConfig(block_size=0)
    with pytest.raises(ArgumentError):
        QuantConfig(orientation="diag")
    # exponent bits are not checked for int
    QuantConfig("int", 4, 0, 128)


def test_mxint_zero_block():
    exp, mant = mxint_quantize_block([0.0, 0.0, 0.0, 0.0], 4, 4)
    assert exp == -8
    assert mant.tolist() == [0, 0, 0, 0]


def test_mxint_hand_example():
    x = [1.0, 0.5, -1.0, 0.25]
    exp, mant = mxint_quantize_block(x, 4, 4)
    assert exp == 0
    assert mant.tolist() == [4, 2, -4, 1]
    assert mxint_dequantize_block(exp, mant, 4).tolist() == x


def test_mxint_half_scale_bound():
    exp, mant = mxint_quantize_block([1.0, 0.3], 4, 4)
    assert exp == 0
    assert abs(mxint_dequantize_block(exp, mant, 4)[1] - 0.3) <= 0.125


def test_mxint_dequantize_examples():
    assert mxint_dequantize_block(3, [0, 0, 0], 4).tolist() == [0.0, 0.0, 0.0]
    assert mxint_dequantize_block(-8, [1], 4)[0] == 2.0**-10


def test_mxint_saturates_above_exponent_range():
    # e_bits=2 caps the exponent at 1, so 100 saturates at 7 * 2**(1-2)
    exp, mant = mxint_quantize_block([100.0, -100.0], 4, 2)
    assert exp == 1
    assert mant.tolist() == [7, -7]


def test_int_group_examples():
    s, q = int_group_quantize([0.0, 0.0, 0.0], 4)
    assert s == 1.0 and q.tolist() == [0, 0, 0]
    s, q = int_group_quantize([1.0, 2.0, 3.0, 4.0], 4)
    assert s == pytest.approx(4 / 7, rel=1e-15)
    assert q.tolist() == [2, 4, 5, 7]
    assert np.allclose(int_group_dequantize(s, q), [8 / 7, 16 / 7, 20 / 7, 4.0], rtol=1e-15, atol=0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 32), elements=finite), st.sampled_from([2, 3, 4, 8]))
def test_int_group_rounding_bound(x, b):
    s, q = int_group_quantize(x, b)
    assert np.max(np.abs(x - s * q)) <= s / 2 * (1 + 1e-12)
    assert np.all(np.abs(q) <= 2 ** (b - 1) - 1)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 32), elements=finite), st.sampled_from([2, 3, 4, 8]), st.sampled_from([2, 4, 8]))
def test_mxint_block_bounds(x, b, e_bits):
    exp, mant = mxint_quantize_block(x, b, e_bits)
    lo, hi = -(2 ** (e_bits - 1)), 2 ** (e_bits - 1) - 1
    assert lo <= exp <= hi
    assert np.all(mant >= -(2 ** (b - 1))) and np.all(mant <= 2 ** (b - 1) - 1)
    xh = mxint_dequantize_block(exp, mant, b)
    step = 2.0 ** (exp - (b - 2))
    qmax = 2 ** (b - 1) - 1
    saturating = np.abs(x) / step > qmax + 0.5
    ok = np.abs(x - xh) <= step / 2
    assert np.all(ok[~saturating])
    assert np.all(np.abs(xh[saturating]) == qmax * step)


def test_quantize_matrix_equal_column():
    w = np.full((16, 1), 0.37)
    q = quantize_matrix(w, weight_config(4))
    assert q.scales.shape == (1, 1)
    step = 2.0 ** (int(q.scales[0, 0]) - 2)
    assert np.max(np.abs(dequantize_matrix(q) - w)) <= step / 2


def test_quantize_matrix_identity_int_row():
    q = quantize_matrix(np.eye(2), QuantConfig("int", 4, 4, 2, "row"))
    assert np.allclose(q.scales.ravel(), [1 / 7, 1 / 7], rtol=1e-15, atol=0)
    assert q.mantissas.tolist() == [[7, 0], [0, 7]]
    assert np.allclose(dequantize_matrix(q), np.eye(2), rtol=0, atol=1e-15)


def test_dequantize_zero_matrix():
    for cfg in CONFIGS:
        assert np.array_equal(dequantize_matrix(quantize_matrix(np.zeros((5, 7)), cfg)), np.zeros((5, 7)))


def test_quantize_matrix_rejects_empty():
    with pytest.raises(ShapeError):
        quantize_matrix(np.zeros((0, 4)), weight_config())


@pytest.mark.parametrize("cfg", CONFIGS)
def test_block_layout_and_ragged_tail(cfg):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((37, 21))
    q = quantize_matrix(w, cfg)
    along = w.shape[1] if cfg.orientation == "row" else w.shape[0]
    nblocks = -(-along // cfg.block_size)
    expected = (w.shape[0], nblocks) if cfg.orientation == "row" else (nblocks, w.shape[1])
    assert q.scales.shape == expected
    # each block is quantized as if it were a standalone vector
    d = dequantize_matrix(q)
    vec = w[3] if cfg.orientation == "row" else w[:, 3]
    got = d[3] if cfg.orientation == "row" else d[:, 3]
    for start in range(0, along, cfg.block_size):
        blk = vec[start : start + cfg.block_size]
        if cfg.kind == "mxint":
            e, m = mxint_quantize_block(blk, cfg.mantissa_bits, cfg.exponent_bits)
            ref = mxint_dequantize_block(e, m, cfg.mantissa_bits)
        else:
            s, m = int_group_quantize(blk, cfg.mantissa_bits)
            ref = int_group_dequantize(s, m)
        assert np.array_equal(got[start : start + cfg.block_size], ref)


@pytest.mark.parametrize("cfg", CONFIGS)
def test_idempotence(cfg):
    rng = np.random.default_rng(1)
    for scale in (1e-4, 1.0, 1e3):
        w = rng.standard_normal((40, 33)) * scale
        q = quantize_matrix(w, cfg)
        q2 = quantize_matrix(dequantize_matrix(q), cfg)
        assert q == q2
        assert np.array_equal(dequantize_matrix(q2), dequantize_matrix(q))


@pytest.mark.parametrize("kind", ["mxint", "int"])
def test_monotone_fidelity(kind):
    rng = np.random.default_rng(6)
    w = rng.standard_normal((64, 48))
    errs = [
        np.linalg.norm(w - dequantize_matrix(quantize_matrix(w, QuantConfig(kind, b, 4, 16, "col"))))
        for b in range(2, 9)
    ]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_element_error_bound_matches_half_step():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((32, 8))
    q = quantize_matrix(w, QuantConfig("int", 4, 4, 16, "col"))
    assert np.all(np.abs(w - dequantize_matrix(q)) <= element_error_bound(q) * (1 + 1e-12))


def test_avg_bitwidth_examples():
    assert avg_bitwidth_exact(weight_config(4), (16, 16), 0) == Fraction(17, 4)
    assert avg_bitwidth(weight_config(4), (4096, 4096), 0) == 4.25
    assert avg_bitwidth_exact(QuantConfig("int", 4, 4, 128), (4096, 4096), 0) == Fraction(33, 8)
    high = QuantConfig("mxint", 8, 4, 16, "col")
    got = avg_bitwidth(weight_config(4), (4096, 4096), 32, high)
    assert got == 4.25 + 8.25 * 2 * 32 / 4096
    assert round(got, 1) == 4.4


@pytest.mark.parametrize("cfg", CONFIGS)
def test_avg_bitwidth_k0_is_storage_cost(cfg):
    m, n = 48, 32
    mant_bits = m * n * cfg.mantissa_bits
    overhead = cfg.exponent_bits if cfg.kind == "mxint" else 16
    # in exact arithmetic the per-element cost is b + overhead / B
    expected = Fraction(mant_bits, m * n) + Fraction(overhead, cfg.block_size)
    assert avg_bitwidth_exact(cfg, (m, n), 0) == expected


def test_overhead_fraction_examples():
    assert overhead_fraction((12288, 49152), 1) == pytest.approx(1.0172526041666667e-4, rel=1e-12)
    assert overhead_fraction((64, 64), 64) == 2.0
    assert overhead_fraction((4096, 4096), 32) == 0.015625
    with pytest.raises(ArgumentError):
        overhead_fraction((4, 4), 0)
