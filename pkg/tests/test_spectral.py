import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memwave.spectral import Field, SpectralBasis, build_basis, lq_norm, norm, regularize


def test_interval_eigenvalues():
    b = build_basis(1.0, 4)
    assert np.allclose(b.eigenvalues, math.pi ** 2 * np.array([1, 4, 9, 16]), rtol=1e-15)


def test_rectangle_lowest_mode():
    b = build_basis((1.0, 1.0), 4)
    assert b.eigenvalues[0] == pytest.approx(2 * math.pi ** 2, rel=1e-15)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert b.size == 16


def test_bad_construction():
    with pytest.raises(ValueError):
        build_basis(1.0, 0)
    with pytest.raises(ValueError):
        build_basis(-1.0, 4)
    with pytest.raises(ValueError):
        SpectralBasis((1.0,), 8, 4)


@pytest.mark.parametrize("domain", [1.0, 2.5, (1.0, 2.0)])
def test_discrete_gram_is_identity(domain):
    b = build_basis(domain, 8)
    modes = np.eye(b.size)[: min(8, b.size)]
    nod = b.to_nodal(modes)
    flat = nod.reshape(nod.shape[0], -1)
    G = flat @ flat.T * b.cell_weight()
    assert np.allclose(G, np.eye(len(modes)), atol=1e-12)


def test_mode_norms():
    b = build_basis(1.0, 8, degree=3)
    u = b.mode(1)
    assert norm(u, "L2") == pytest.approx(1.0)
    assert norm(u, "H10") == pytest.approx(math.pi)
    assert norm(u, "Lp", 4) ** 4 == pytest.approx(1.5, rel=1e-13)
    for j in (1, 3, 7):
        assert norm(b.mode(j), "Hneg1") == pytest.approx(b.eigenvalues[j - 1] ** -0.5)
    with pytest.raises(ValueError):
        norm(u, "Lp", 0.5)
    with pytest.raises(ValueError):
        norm(u, "H2")


def test_transforms():
    b = build_basis(1.0, 8)
    x = b.nodes()
    e2 = math.sqrt(2.0) * np.sin(2 * math.pi * x)
    c = b.to_coeffs(e2)
    assert np.allclose(c, np.eye(8)[1], atol=1e-14)
    with pytest.raises(ValueError):
        b.to_coeffs(np.ones(b.n_quad + 1))
    with pytest.raises(ValueError):
        b.to_nodal(np.ones(b.size + 1))


def test_constant_function_sine_series():
    N = 9
    b = build_basis(1.0, N)
    Q = 4000
    c = b.to_coeffs(np.ones(Q), Q)
    j = np.arange(1, N + 1)
    expected = np.where(j % 2 == 1, 2 * math.sqrt(2) / (j * math.pi), 0.0)
    assert np.allclose(c, expected, atol=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_round_trip_and_parseval(N, seed, rect):
    rng = np.random.default_rng(seed)
    b = build_basis((1.0, 1.5) if rect else 1.3, N)
    c = rng.standard_normal(b.size)
    back = b.to_coeffs(b.to_nodal(c))
    assert np.max(np.abs(back - c)) <= 1e-12 * (1 + np.abs(c).max())
    l2q = math.sqrt(b.integrate(b.to_nodal(c) ** 2))
    assert l2q == pytest.approx(norm(Field(b, c), "L2"), rel=1e-10)


def test_regularize_examples():
    b = build_basis(1.0, 8)
    u = b.mode(1)
    half = regularize(u, 1.0 / math.pi ** 2)
    assert np.allclose(half.coeffs, 0.5 * u.coeffs, rtol=1e-15)
    assert np.array_equal(regularize(u, 0.0).coeffs, u.coeffs)
    with pytest.raises(ValueError):
        regularize(u, -1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-6, 1.0))
def test_regularize_contracts(seed, eps):
    rng = np.random.default_rng(seed)
    b = build_basis(1.0, 12)
    u = Field(b, rng.standard_normal(b.size))
    v = regularize(u, eps)
    assert norm(v, "L2") <= norm(u, "L2")
    assert norm(v, "H10") <= norm(u, "H10")
    assert norm(v - u, "H10") <= eps * b.eigenvalues[-1] * norm(u, "H10")
    for q in (2.0, 4.0):
        assert lq_norm(b, v.coeffs, q) <= lq_norm(b, u.coeffs, q) * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_hneg1_duality(seed):
    rng = np.random.default_rng(seed)
    b = build_basis(1.0, 10)
    u = Field(b, rng.standard_normal(b.size))
    phi = Field(b, rng.standard_normal(b.size))
    assert abs(u.coeffs @ phi.coeffs) <= norm(u, "Hneg1") * norm(phi, "H10") * (1 + 1e-12)
    e = b.mode(3)
    assert e.coeffs @ e.coeffs == pytest.approx(norm(e, "Hneg1") * norm(e, "H10"))


def test_field_arithmetic():
    b = build_basis(1.0, 4)
    u, v = b.mode(1), b.mode(2)
    assert np.array_equal((u + v - u).coeffs, v.coeffs)
    assert np.array_equal((2 * u).coeffs, (u * 2).coeffs)
    assert np.array_equal((-u).coeffs, -u.coeffs)
    with pytest.raises(ValueError):
        Field(b, np.zeros(5))
