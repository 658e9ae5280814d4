import io
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mea.errors import FormatError, InvalidArgument
from mea.fields import (RESOLUTIONS, WINDOWS, MultiResStack, ScalarField, build_stack, condense_max,
                        interp_matrix, read_field, resample, write_field)


def test_scalar_field_invariants():
    with pytest.raises(InvalidArgument):
        ScalarField(np.zeros((1, 1)))
    with pytest.raises(InvalidArgument):
        ScalarField(np.zeros((3, 4)))
    with pytest.raises(InvalidArgument):
        ScalarField(np.array([[0.0, np.nan], [1.0, 1.0]]))
    f = ScalarField.constant(5, 2.0)
    assert f.n == 5 and f.h == pytest.approx(0.25)
    with pytest.raises(ValueError):
        f.values[0, 0] = 3.0
    with pytest.raises(InvalidArgument):
        ScalarField.constant(3, 0.0).require_positive()


def test_from_function_layout_row_is_y():
    f = ScalarField.from_function(11, lambda x, y: x + 10 * y)
    assert f.values[0, 10] == pytest.approx(1.0)
    assert f.values[10, 0] == pytest.approx(10.0)


def test_condense_constant():
    out = condense_max(ScalarField.constant(101, 0.7), 2)
    assert out.n == 51 and np.all(out.values == 0.7)


@pytest.mark.parametrize("side,window", sorted(WINDOWS.items()))
def test_condense_sizes(side, window):
    assert condense_max(ScalarField.constant(101, 1.0), window).n == side == math.ceil(101 / window)


def test_condense_block_maxima():
    f = ScalarField(np.arange(1, 17, dtype=float).reshape(4, 4))
    np.testing.assert_array_equal(condense_max(f, 2).values, [[6, 8], [14, 16]])


def test_condense_partial_block_and_identity():
    f = ScalarField(np.arange(25, dtype=float).reshape(5, 5))
    np.testing.assert_array_equal(condense_max(f, 2).values, [[6, 8, 9], [16, 18, 19], [21, 23, 24]])
    assert condense_max(f, 1) == f


@pytest.mark.parametrize("window", [0, 6, -1, 2.5])
def test_condense_bad_window(window):
    with pytest.raises(InvalidArgument):
        condense_max(ScalarField.constant(5, 1.0), window)


def test_build_stack_single_hot_node():
    v = np.full((101, 101), 0.1)
    v[50, 50] = 1.0
    stack = build_stack(ScalarField(v), "hot")
    assert set(stack.levels) == set(RESOLUTIONS)
    for n, w in WINDOWS.items():
        lvl = stack[n].values
        assert np.count_nonzero(lvl >= 1.0) == 1
        assert lvl[50 // w, 50 // w] == 1.0


def test_build_stack_requires_101():
    with pytest.raises(InvalidArgument):
        build_stack(ScalarField.constant(51, 1.0))
    with pytest.raises(InvalidArgument):
        MultiResStack({101: ScalarField.constant(101, 1.0)})


def test_condense_commutes_with_monotone_map():
    rng = np.random.default_rng(3)
    f = ScalarField(rng.random((101, 101)))
    for w in WINDOWS.values():
        a = condense_max(ScalarField(np.exp(f.values)), w).values
        b = np.exp(condense_max(f, w).values)
        np.testing.assert_array_equal(a, b)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (101, 101), elements=st.floats(0.01, 10.0, allow_nan=False)))
def test_condense_property(v):
    f = ScalarField(v)
    stack = build_stack(f)
    values = set(np.unique(v).tolist())
    for n, w in WINDOWS.items():
        lvl = stack[n].values
        assert lvl.shape == (n, n)
        assert set(np.unique(lvl).tolist()) <= values
        assert lvl.max() == v.max()


def test_resample_ramp_order1_exact():
    ramp = ScalarField.from_function(11, lambda x, y: x)
    out = resample(ramp, 101, order=1)
    expected = ScalarField.from_function(101, lambda x, y: x).values
    assert np.abs(out.values - expected).max() <= 1e-12


@pytest.mark.parametrize("order", [0, 1, 3])
def test_resample_constant_and_identity(order):
    c = resample(ScalarField.constant(11, 0.3), 101, order)
    assert np.allclose(c.values, 0.3, atol=1e-14)
    f = ScalarField(np.random.default_rng(1).random((13, 13)))
    assert np.allclose(resample(f, 13, order).values, f.values, atol=1e-14)


def test_resample_bilinear_hand_oracle():
    f = ScalarField(np.array([[0, 0, 0], [0, 1.0, 0], [0, 0, 0]]))
    out = resample(f, 5, 1).values
    assert out[2, 2] == 1.0
    assert out[1, 2] == out[2, 1] == out[3, 2] == out[2, 3] == 0.5
    assert out[1, 1] == out[1, 3] == out[3, 1] == out[3, 3] == 0.25


def test_resample_bilinear_fields_exact():
    f = ScalarField.from_function(11, lambda x, y: 1 + 2 * x - y + 3 * x * y)
    g = ScalarField.from_function(101, lambda x, y: 1 + 2 * x - y + 3 * x * y)
    assert np.abs(resample(f, 101, 1).values - g.values).max() < 1e-12


def test_resample_cubic_keys_interior_values():
    # Keys cubic convolution with a=-0.5 reproduces quadratics away from the border
    n = 21
    f = ScalarField.from_function(n, lambda x, y: x * x)
    out = resample(f, 41, 3).values
    x = np.linspace(0, 1, 41)
    assert np.abs(out[5, 4:-4] - x[4:-4] ** 2).max() < 1e-12


def test_resample_bad_order():
    with pytest.raises(InvalidArgument):
        resample(ScalarField.constant(5, 1.0), 9, order=2)
    with pytest.raises(InvalidArgument):
        resample(ScalarField.constant(5, 1.0), 1, order=1)


def test_interp_matrix_rows_sum_to_one():
    for order in (0, 1, 3):
        R = interp_matrix(11, 101, order)
        assert np.allclose(R.sum(axis=1), 1.0)


def test_meaf_roundtrip(tmp_path):
    f = ScalarField(np.random.default_rng(0).random((11, 11)).astype(np.float32).astype(np.float64))
    p = tmp_path / "f.meaf"
    write_field(p, f)
    raw = p.read_bytes()
    assert raw[:4] == b"MEAF" and struct.unpack("<II", raw[4:12]) == (1, 11)
    assert len(raw) == 12 + 4 * 121
    g = read_field(p)
    assert g == f
    write_field(tmp_path / "g.meaf", g)
    assert (tmp_path / "g.meaf").read_bytes() == raw
    buf = io.BytesIO()
    write_field(buf, f)
    assert buf.getvalue() == raw


@pytest.mark.parametrize("payload", [b"XXXX" + struct.pack("<II", 1, 2) + b"\0" * 16,
                                     b"MEAF" + struct.pack("<II", 2, 2) + b"\0" * 16,
                                     b"MEAF" + struct.pack("<II", 1, 2) + b"\0" * 15,
                                     b"MEAF" + struct.pack("<II", 1, 2) + b"\0" * 20,
                                     b"MEA"])
def test_meaf_malformed(tmp_path, payload):
    p = tmp_path / "bad.meaf"
    p.write_bytes(payload)
    with pytest.raises(FormatError):
        read_field(p)
