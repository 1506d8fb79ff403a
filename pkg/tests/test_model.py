import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memwave.model import (CUTOFF_SLOPE_CONST, DampingSpec, KernelError, MemoryKernel,
                           SourceRangeError, SourceSpec, classify_source, cutoff_eta,
                           cutoff_eta_deriv, cutoff_source_n, eval_damping, eval_source,
                           kernel_mass, truncate_source_K, validate_assumptions)
from memwave.spectral import build_basis


def _check(p, m, kernel=None):
    kernel = kernel or MemoryKernel.prony([1.0], [1.0])
    return validate_assumptions(kernel, DampingSpec(m=m), SourceSpec(p=p))


def test_exponent_balance_strict_inequality():
    assert _check(5.0, 6.0)["exponents.p(m+1)/m<6"].passed
    assert not _check(5.0, 5.0)["exponents.p(m+1)/m<6"].passed
    assert not _check(5.0, 5.0).passed


def test_prony_kernel_bullets_pass():
    k = MemoryKernel.prony([2.0, 1.0], [1.0, 2.0])
    rep = validate_assumptions(k, DampingSpec(m=3.0), SourceSpec(p=3.0))
    assert rep["kernel.admissible"].passed
    assert rep.passed
    assert k.kappa == pytest.approx(2.5, rel=1e-15)


def test_report_lists_each_bullet():
    rep = _check(3.0, 3.0)
    names = [c.name for c in rep.checks]
    assert names == ["damping.monotone", "damping.growth", "source.growth",
                     "exponents.p(m+1)/m<6", "kernel.admissible", "initial_data.boundary"]
    assert "smallest sampled C" in rep["source.growth"].detail


def test_no_memory_kernel_fails_kernel_bullet():
    rep = validate_assumptions(MemoryKernel.none(), DampingSpec(), SourceSpec())
    assert not rep["kernel.admissible"].passed


def test_zero_damping_fails_monotone_growth():
    rep = validate_assumptions(MemoryKernel.prony([1.0], [1.0]), DampingSpec(shape="zero"),
                               SourceSpec())
    assert not rep.passed


def test_kernel_mass_examples():
    k = MemoryKernel.prony([1.0], [1.0])
    assert kernel_mass(k) == 1.0
    assert k.k0 == 2.0
    assert kernel_mass(MemoryKernel.prony([2.0, 1.0], [1.0, 2.0])) == 2.5
    pw = MemoryKernel.power(1.0, 3.0)
    assert kernel_mass(pw) == pytest.approx(0.5 - 0.5 / (1.0 + pw.s_max) ** 2, rel=1e-12)
    assert 0.5 - kernel_mass(pw) <= pw.tail_tol * 0.5 * pw.s_max * (1 + 1e-6)
    short = MemoryKernel.power(1.0, 3.0, s_max=10.0)
    assert kernel_mass(short) == pytest.approx(0.5 - 0.5 / 121.0, rel=1e-12)


def test_divergent_power_kernel_rejected():
    with pytest.raises(KernelError):
        MemoryKernel.power(1.0, 1.0)
    with pytest.raises(KernelError):
        MemoryKernel.prony([1.0], [-1.0])


def test_auto_horizon_meets_tail_rule():
    for k in (MemoryKernel.prony([1.0], [1.0]), MemoryKernel.prony([2.0, 1.0], [0.5, 3.0]),
              MemoryKernel.power(1.0, 3.0)):
        assert k.mu(k.s_max) <= k.tail_tol * k.mu0 * (1 + 1e-9)
        assert k.tail_mass(k.s_max) <= k.tail_tol * k.kappa * k.s_max * (1 + 1e-6)


def test_hat_weights_sum_and_order():
    k = MemoryKernel.prony([1.0, 0.5], [1.0, 4.0])
    for ds in (0.1, 0.01):
        n = int(math.ceil(k.s_max / ds)) + 1
        w = k.hat_weights(ds, n)
        assert w.sum() == pytest.approx(k.kappa - k.tail_mass((n - 1) * ds), rel=1e-12)
        assert np.all(np.diff(w[1:]) <= 0)
        psi = k.hat_weights(ds, n, derivative=True)
        assert psi.sum() == pytest.approx(k.mu0 - k.mu((n - 1) * ds), rel=1e-12)


def test_hat_weights_generic_matches_closed_form():
    # route an exponential through the Gauss-Legendre path by overriding mu
    k = MemoryKernel.prony([1.5], [2.0])
    ds, n = 0.05, 200
    fake = MemoryKernel.power(1.0, 3.0)
    object.__setattr__(fake, "mu", k.mu)
    object.__setattr__(fake, "dmu", k.dmu)
    assert np.allclose(fake.hat_weights(ds, n), k.hat_weights(ds, n), rtol=1e-12, atol=1e-15)
    assert np.allclose(fake.hat_weights(ds, n, True), k.hat_weights(ds, n, True),
                       rtol=1e-12, atol=1e-15)


def test_classify_source():
    assert classify_source(2.0) == "subcritical"
    assert classify_source(3.0) == "critical"
    assert classify_source(4.0) == "supercritical"
    assert classify_source(5.0) == "supercritical"
    assert classify_source(5.5) == "super-supercritical"
    for bad in (0.5, 6.0, 7.0):
        with pytest.raises(SourceRangeError):
            classify_source(bad)


def test_damping_and_source_values():
    g, dg = eval_damping(DampingSpec(m=3.0), 2.0)
    assert g == 8.0 and dg == 12.0
    assert eval_damping(DampingSpec(m=3.0), 0.0)[0] == 0.0
    f, df, d2f = eval_source(SourceSpec(p=3.0), 2.0)
    assert (f, df, d2f) == (8.0, 12.0, 12.0)
    assert eval_source(SourceSpec(p=3.0), 0.0)[0] == 0.0
    assert SourceSpec(p=3.0, sign=-1.0).f(2.0) == -8.0


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 8.0), st.floats(-50, 50), st.floats(-50, 50))
def test_damping_monotone_property(m, a, b):
    d = DampingSpec(m=m)
    lo, hi = min(a, b), max(a, b)
    assert d.g(lo) <= d.g(hi)
    assert d.g(a) * a >= 0


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 5.99), st.floats(-1e3, 1e3))
def test_source_growth_bound_property(p, s):
    src = SourceSpec(p=p)
    assert abs(src.df(s)) <= src.C * (abs(s) ** (p - 1.0) + 1.0) * (1 + 1e-12)
    if p >= 2.0:
        assert abs(src.d2f(s)) <= p * (p - 1) * (abs(s) ** (p - 2.0) + 1.0) * (1 + 1e-12)


def test_truncation_cases():
    basis = build_basis(1.0, 8)
    src = SourceSpec(p=3.0)
    K = 4.0
    u = basis.mode(1) * (0.5 * K / math.pi)            # ||grad u|| = K/2
    assert np.array_equal(truncate_source_K(src, u, K), src.f(u.to_nodal()))
    u2 = basis.mode(1) * (2.0 * K / math.pi)           # ||grad u|| = 2K
    assert np.allclose(truncate_source_K(src, u2, K), src.f(0.5 * u2.to_nodal()), rtol=1e-14)
    assert np.array_equal(truncate_source_K(src, u2, 1e9), src.f(u2.to_nodal()))
    with pytest.raises(ValueError):
        truncate_source_K(src, u, 0.0)


def test_cutoff_properties():
    src = SourceSpec(p=3.0)
    n = 2.0
    s = np.linspace(-n, n, 101)
    assert np.array_equal(cutoff_source_n(src, n, s), src.f(s))
    far = np.array([2 * n, 2.5 * n, -3 * n])
    assert np.all(cutoff_source_n(src, n, far) == 0.0)
    mid = cutoff_source_n(src, n, 1.5 * n)
    assert 0.0 < mid < src.f(1.5 * n)
    assert mid == pytest.approx(0.5 * src.f(1.5 * n))       # smoothstep is 1/2 at the centre
    for nn in (0.5, 1.0, 7.0):
        ss = np.linspace(-3 * nn, 3 * nn, 20001)
        assert np.max(np.abs(cutoff_eta_deriv(nn, ss))) <= CUTOFF_SLOPE_CONST / nn * (1 + 1e-12)
        fd = np.gradient(cutoff_eta(nn, ss), ss)
        assert np.allclose(fd, cutoff_eta_deriv(nn, ss), atol=1e-3 / nn)


def test_cutoff_converges_to_source():
    src = SourceSpec(p=3.0)
    s = np.linspace(-5, 5, 51)
    assert np.array_equal(cutoff_source_n(src, 5.0, s), src.f(s))
