import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ggdd.tensor_algebra as ta
from ggdd.errors import NonSkewInput

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False,
                   allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
mat3 = st.lists(finite, min_size=9, max_size=9).map(
    lambda v: np.array(v).reshape(3, 3))


def test_spn_unit_vector():
    out = ta.spn(np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(out, np.array([[0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]]))


def test_spn_zero():
    assert np.all(ta.spn(np.zeros(3)) == 0.0)


def test_spn_is_cross_product():
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([4.0, 5.0, 6.0])
    assert np.allclose(ta.mat_vec(ta.spn(a), b), [-3.0, 6.0, -3.0])
    assert np.allclose(ta.cross(a, b), [-3.0, 6.0, -3.0])


def test_spn_inv_roundtrip():
    a = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(ta.spn_inv(ta.spn(a)), a)


def test_spn_frobenius_pairing():
    # spn a : spn b = 2 a.b
    a = np.array([1.0, 0.0, 2.0])
    b = np.array([3.0, 1.0, 0.0])
    assert ta.frob(ta.spn(a), ta.spn(b)) == pytest.approx(2 * a @ b)


def test_spn_inv_rejects_symmetric():
    with pytest.raises(NonSkewInput):
        ta.spn_inv(np.eye(3))


def test_parts_identity():
    s, k, d, t = ta.parts(np.eye(3))
    assert np.allclose(s, np.eye(3))
    assert np.all(k == 0.0)
    assert np.allclose(d, 0.0)
    assert t == pytest.approx(3.0)


def test_parts_skew_input():
    A = ta.spn(np.array([1.0, 2.0, 3.0]))
    s, k, d, t = ta.parts(A)
    assert np.allclose(s, 0.0)
    assert np.allclose(k, A)


def test_skw_spn_formula():
    A = np.zeros((3, 3))
    A[2, 1], A[1, 2] = 1.5, -0.5   # A32 - A23 = 2
    A[0, 2], A[2, 0] = 3.0, -1.0   # A13 - A31 = 4
    A[1, 0], A[0, 1] = 2.0, -4.0   # A21 - A12 = 6
    assert np.allclose(ta.skw(A), 0.5 * ta.spn(np.array([2.0, 4.0, 6.0])))


@given(vec3, vec3)
@settings(max_examples=60, deadline=None)
def test_prop_spn_pairing(a, b):
    scale = max(np.abs(a).max() * np.abs(b).max(), 1.0)
    assert abs(ta.frob(ta.spn(a), ta.spn(b)) - 2 * (a @ b)) <= 1e-12 * scale


@given(mat3)
@settings(max_examples=60, deadline=None)
def test_prop_sym_skw_split(A):
    assert np.array_equal(ta.sym(A) + ta.skw(A), A)
    scale = max(np.abs(A).max(), 1e-30)
    assert abs(ta.tr(ta.dev(A))) <= 1e-14 * scale


@given(vec3, mat3)
@settings(max_examples=60, deadline=None)
def test_prop_spn_adjoint(a, A):
    K = ta.skw(A)
    lhs = ta.frob(ta.spn(a), K)
    rhs = 2 * (a @ ta.spn_inv(K))
    scale = max(np.abs(a).max() * np.abs(K).max(), 1.0)
    assert abs(lhs - rhs) <= 1e-12 * scale


@given(mat3, mat3)
@settings(max_examples=60, deadline=None)
def test_prop_trace_identities(A, B):
    scale = max((np.abs(A) * np.abs(B)).sum(), 1.0)
    tAB = ta.tr(np.einsum("ij,jk->ik", A, B))
    assert abs(ta.frob(ta.transpose(A), B) - tAB) <= 1e-12 * scale
    assert abs(ta.frob(ta.transpose(B), A) - tAB) <= 1e-12 * scale


def test_idempotence():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    assert np.allclose(ta.sym(ta.sym(A)), ta.sym(A))
    assert np.allclose(ta.dev(ta.dev(A)), ta.dev(A))


def test_vec_tensor_products():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(3)
    B = rng.standard_normal((3, 3))
    cross, dot = ta.vec_tensor_products(a, B)
    for i in range(3):
        assert np.allclose(cross[i], np.cross(a, B[i]))
    assert np.allclose(dot, B @ a)
    # row-wise exterior product equals -B spn(a)
    assert np.allclose(cross, -np.einsum("ij,jk->ik", B, ta.spn(a)))


def test_vec_tensor_parallel_rows():
    a = np.array([1.0, 2.0, -1.0])
    B = np.stack([2.0 * a, -0.5 * a, 0.0 * a])
    cross, _ = ta.vec_tensor_products(a, B)
    assert np.abs(cross).max() <= 1e-14


def test_dot_identity():
    ones = np.ones(3)
    _, dot = ta.vec_tensor_products(ones, np.eye(3))
    assert np.allclose(dot, ones)


def test_stacked_fields_shapes():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3, 4, 5))
    assert ta.sym(A).shape == A.shape
    assert ta.tr(A).shape == (4, 5)
    assert ta.spn(rng.standard_normal((3, 6))).shape == (3, 3, 6)
