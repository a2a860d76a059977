import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import jacobi_singular_values, loop_contract
from tnprivacy.tensor import (
    ShapeMismatchError, SingularMatrixError, TensorError, as_tensor, condition_number, contract,
    format_tensor, invert, parse_tensor, random_tensor, read_tensors, reshape, svd, transpose,
    write_tensors)


def test_as_tensor_reshapes_and_rejects_bad_fill():
    t = as_tensor(range(6), (2, 3))
    assert t.shape == (2, 3) and t.dtype == np.float64 and t[1, 0] == 3.0
    with pytest.raises(ShapeMismatchError):
        as_tensor(range(5), (2, 3))
    with pytest.raises(ShapeMismatchError):
        as_tensor([], (0,))


@pytest.mark.parametrize("seed", range(5))
def test_contract_matches_loops(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 2, 3))
    pairs = [(2, 0), (0, 1)]
    np.testing.assert_allclose(contract(a, b, pairs), loop_contract(a, b, pairs), atol=1e-12)


def test_contract_validates_axes():
    a, b = np.ones((2, 3)), np.ones((4, 2))
    with pytest.raises(ShapeMismatchError):
        contract(a, b, [(1, 0)])
    with pytest.raises(ShapeMismatchError):
        contract(a, b, [(0, 1), (0, 1)])
    with pytest.raises(ShapeMismatchError):
        contract(a, b, [(5, 0)])


def test_outer_product_when_no_axes_paired():
    a, b = np.arange(2.0), np.arange(3.0)
    np.testing.assert_array_equal(contract(a, b, []), np.outer(a, b))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_svd_reconstructs_and_matches_jacobi(rows, cols, seed):
    m = np.random.default_rng(seed).normal(size=(rows, cols))
    u, s, vt = svd(m)
    np.testing.assert_allclose(u @ np.diag(s) @ vt, m, atol=1e-12)
    np.testing.assert_allclose(s, jacobi_singular_values(m), atol=1e-10)
    assert np.all(np.diff(s) <= 1e-14)
    np.testing.assert_allclose(u.T @ u, np.eye(len(s)), atol=1e-12)


def test_svd_rejects_nonfinite():
    with pytest.raises(TensorError):
        svd(np.array([[1.0, np.nan]]))


def test_invert_and_condition_cap():
    m = np.array([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(invert(m) @ m, np.eye(2), atol=1e-14)
    with pytest.raises(SingularMatrixError) as exc:
        invert(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert exc.value.condition > 1e12
    with pytest.raises(SingularMatrixError):
        invert(np.diag([1.0, 1e-9]), cond_cap=1e6)
    assert condition_number(np.diag([4.0, 2.0])) == pytest.approx(2.0)


def test_reshape_and_transpose():
    t = np.arange(24.0).reshape(2, 3, 4)
    assert reshape(t, (6, 4)).shape == (6, 4)
    with pytest.raises(ShapeMismatchError):
        reshape(t, (5, 5))
    p = transpose(t, (2, 0, 1))
    assert p.shape == (4, 2, 3) and p[1, 0, 2] == t[0, 2, 1]
    with pytest.raises(ShapeMismatchError):
        transpose(t, (0, 0, 1))


def test_random_tensor_moments_and_seeding():
    g = random_tensor((100000,), seed=1)
    assert abs(g.mean()) < 0.02 and abs(g.var() - 1.0) < 0.03
    np.testing.assert_array_equal(g, random_tensor((100000,), seed=1))
    u = random_tensor((1000,), "uniform", (2.0, 3.0), seed=2)
    assert u.min() >= 2.0 and u.max() < 3.0
    with pytest.raises(ValueError):
        random_tensor((2,), "cauchy")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 10 ** 6))
def test_text_round_trip_is_exact(shape, seed):
    t = np.random.default_rng(seed).normal(size=shape) * 10.0 ** np.random.default_rng(seed).integers(-8, 8)
    back = parse_tensor(format_tensor(t))
    assert back.shape == t.shape
    np.testing.assert_array_equal(back, t)


def test_stream_round_trip_and_truncation():
    ts = [np.eye(2), np.arange(3.0)]
    buf = io.StringIO()
    write_tensors(buf, ts)
    buf.seek(0)
    back = read_tensors(buf, 2)
    for a, b in zip(ts, back):
        np.testing.assert_array_equal(a, b)
    buf.seek(0)
    with pytest.raises(TensorError):
        read_tensors(buf, 3)
