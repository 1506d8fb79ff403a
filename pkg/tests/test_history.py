import math
import struct

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from memwave import kernels
from memwave.history import (HistoryField, PastHistory, Profile, PronyConvolution,
                             TrajectoryGapError, UTrajectory, advance_history,
                             direct_convolution_oracle, init_history, memory_operator, mu_inner,
                             n_history_nodes, read_snapshot, reconstruct_check, write_snapshot)
from memwave.model import MemoryKernel
from memwave.spectral import Field, build_basis, norm

BASIS = build_basis(1.0, 8)
KERNEL = MemoryKernel.prony([1.0], [1.0])


def e1(basis=BASIS):
    return basis.mode(1).coeffs


def test_init_history_cosine_past():
    past = PastHistory.single(e1(), Profile("trig", omega=1.0))
    w, u0, v0 = init_history(past, BASIS, KERNEL, 0.1)
    expected = np.outer(1.0 - np.cos(w.s), e1())
    assert np.allclose(w.W, expected, atol=1e-15)
    assert np.allclose(u0.coeffs, e1())
    assert np.allclose(v0.coeffs, 0.0, atol=1e-15)


def test_init_history_constant_past():
    past = PastHistory.single(e1(), Profile("const"))
    w, _, v0 = init_history(past, BASIS, KERNEL, 0.1)
    assert np.all(w.W == 0.0)
    assert np.all(v0.coeffs == 0.0)


def test_init_history_exponential_past_norm():
    past = PastHistory.single(e1(), Profile("exp", rate=1.0))
    vals = []
    for ds in (0.02, 0.01):
        w, _, _ = init_history(past, BASIS, KERNEL, ds)
        vals.append(w.norm_mu_sq())
    target = math.pi ** 2 / 3.0
    errs = [abs(v - target) for v in vals]
    assert errs[1] < errs[0] and errs[1] <= 1e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_init_history_rejects_bad_past():
    past = PastHistory.single(np.ones(3), Profile("const"))
    with pytest.raises(ValueError):
        init_history(past, BASIS, KERNEL, 0.1)
    bad = PastHistory.single(e1(), Profile("exp", rate=-1e3))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(ValueError):
        init_history(bad, BASIS, KERNEL, 0.1)


def test_weights_reproduce_mass():
    for k in (KERNEL, MemoryKernel.prony([2.0, 1.0], [1.0, 2.0]), MemoryKernel.power(1.0, 4.0)):
        w = HistoryField.empty(BASIS, k, 0.05)
        tot = w.omega.sum()
        assert k.kappa * (1 - k.tail_tol * k.s_max) - 1e-12 <= tot <= k.kappa * (1 + 1e-12)
        # independent check: the mass of mu up to the end of the grid
        end = min(w.s[-1], k.s_max) if k.family == "power" else w.s[-1]
        covered = quad(k.mu, 0.0, end, limit=500, epsabs=1e-14, epsrel=1e-13)[0]
        assert tot == pytest.approx(covered, rel=1e-10)
        assert w.n_nodes == n_history_nodes(k, 0.05)


def test_memory_operator_examples():
    w = HistoryField.empty(BASIS, KERNEL, 0.1)
    assert np.all(memory_operator(w).coeffs == 0.0)
    w.W[1] = e1()
    w.refresh()
    val = memory_operator(w).coeffs @ e1()
    assert val == pytest.approx(-w.omega[1] * BASIS.eigenvalues[0], rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_duality_and_sqrt_kappa_bound(seed):
    rng = np.random.default_rng(seed)
    w = HistoryField.empty(BASIS, KERNEL, 0.25)
    W = rng.standard_normal(w.W.shape)
    W[0] = 0.0
    w.W[:] = W
    w.refresh()
    phi = Field(BASIS, rng.standard_normal(BASIS.size))
    lhs = memory_operator(w).coeffs @ phi.coeffs
    assert abs(lhs + mu_inner(w, phi)) <= 1e-12 * (1 + math.sqrt(w.norm_mu_sq()) * norm(phi, "H10"))
    bound = math.sqrt(w.omega.sum()) * math.sqrt(w.norm_mu_sq())
    assert norm(memory_operator(w), "Hneg1") <= bound * (1 + 1e-12)
    assert bound <= math.sqrt(KERNEL.kappa) * math.sqrt(w.norm_mu_sq()) * (1 + 1e-12)


def test_advance_pure_shift():
    past = PastHistory.single(e1(), Profile("trig"))
    w, _, _ = init_history(past, BASIS, KERNEL, 0.1)
    zero = np.zeros(BASIS.size)
    w2 = advance_history(w, zero, zero, 0.1)
    assert np.array_equal(w2.W[1:], w.W[:-1])
    assert np.all(w2.W[0] == 0.0)
    assert w2 is not w


def test_advance_linear_motion_from_rest():
    dt = 0.05
    w, _, _ = init_history(PastHistory.zero(BASIS.size), BASIS, KERNEL, dt)
    for k in range(40):
        w = advance_history(w, e1(), e1(), dt)
    t = 40 * dt
    expected = np.outer(np.minimum(w.s, t), e1())
    assert np.allclose(w.W, expected, atol=1e-13)
    traj = UTrajectory(dt, PastHistory.zero(BASIS.size))
    for k in range(41):
        traj.append(k * dt * e1())
    assert reconstruct_check(w, traj.u_at(t)[0], traj.u_at(t - w.s)) <= 1e-12


def test_advance_frozen_displacement():
    w, _, _ = init_history(PastHistory.single(e1(), Profile("const")), BASIS, KERNEL, 0.1)
    zero = np.zeros(BASIS.size)
    for _ in range(10):
        w = advance_history(w, zero, zero, 0.1)
    assert np.all(w.W == 0.0)


def test_advance_contract_and_window():
    w = HistoryField.empty(BASIS, KERNEL, 0.1)
    with pytest.raises(ValueError):
        advance_history(w, np.zeros(8), np.zeros(8), 0.05)
    win = np.ones((3, BASIS.size))
    w2 = advance_history(w, np.zeros(8), np.zeros(8), 0.1, u_window=win)
    assert np.all(w2.W[0] == 0.0) and np.all(w2.W[1:3] == 1.0)
    assert w2.q[1] == pytest.approx(BASIS.eigenvalues.sum())


def test_reconstruct_at_time_zero():
    past = PastHistory.single(e1(), Profile("trig", omega=2.0, phase=0.1))
    w, u0, _ = init_history(past, BASIS, KERNEL, 0.1)
    assert reconstruct_check(w, u0, past.u(-w.s)) == 0.0


def test_direct_oracle_trivial_cases():
    dt = 0.1
    zero = UTrajectory(dt, PastHistory.zero(BASIS.size))
    zero.append(np.zeros(BASIS.size))
    I, L = direct_convolution_oracle(zero, KERNEL, 0.0, BASIS.eigenvalues)
    assert np.all(I == 0.0) and np.all(L == 0.0)
    const = UTrajectory(dt, PastHistory.single(e1(), Profile("const")))
    for _ in range(5):
        const.append(e1())
    I, _ = direct_convolution_oracle(const, KERNEL, 0.4, BASIS.eigenvalues)
    assert np.all(I == 0.0)
    with pytest.raises(TrajectoryGapError):
        direct_convolution_oracle(const, KERNEL, 1.0, BASIS.eigenvalues)
    with pytest.raises(TrajectoryGapError):
        const.u_at(0.05)


def test_prony_oracle_infinite_past():
    past = PastHistory.single(e1(), Profile("exp", rate=1.0))
    rc = PronyConvolution(MemoryKernel.prony([1.0, 2.0], [1.0, 3.0]), past)
    assert np.allclose(rc.I[:, 0], [1.0 / 2.0, 1.0 / 4.0], rtol=1e-12)
    # u = e^t: int mu(s)(e^t - e^{t-s}) ds at t=0 is sum c (1/th - 1/(th+1))
    expected = 1.0 * (1 - 0.5) + 2.0 * (1 / 3 - 1 / 4)
    assert rc.memory_integral(e1())[0] == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        PronyConvolution(MemoryKernel.power(), past)


def test_prony_oracle_linear_trajectory_exact():
    past = PastHistory.single(e1(), Profile("poly", poly=(0.2, 1.0)))
    k = MemoryKernel.prony([1.0], [2.0])
    rc = PronyConvolution(k, past)
    dt = 0.1
    for n in range(10):
        rc.advance(past.u(n * dt), past.u((n + 1) * dt), dt)
    # u(t) - u(t-s) = s e1, so the integral is int mu(s) s ds = c / th^2
    assert rc.memory_integral(past.u(1.0))[0] == pytest.approx(0.25, rel=1e-12)


def test_solver_history_matches_stored_trajectory():
    from memwave.model import DampingSpec, SourceSpec
    from memwave.solver import Model, StepperConfig, init_state, step

    model = Model(BASIS, KERNEL, DampingSpec(m=3.0), SourceSpec(p=3.0))
    past = PastHistory.single(0.5 * e1(), Profile("trig", phase=0.3))
    dt = 2.0 ** -6
    state = init_state(past, model, dt)
    cfg = StepperConfig(dt)
    for _ in range(50):
        step(state, cfg, model)
        assert np.all(state.w.W[0] == 0.0)
    assert reconstruct_check(state.w, state.u, state.ring.lagged()) <= 1e-13


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
def test_transport_backends_agree():
    rng = np.random.default_rng(1)
    w1 = HistoryField.empty(BASIS, KERNEL, 0.1)
    w1.W[1:] = rng.standard_normal(w1.W[1:].shape)
    w1.refresh()
    w2 = w1.copy()
    w2.refresh()
    for _ in range(20):
        du = rng.standard_normal(BASIS.size)
        w1.transport(du, "compiled")
        w2.transport(du, "python")
    assert np.allclose(w1.W, w2.W, rtol=0, atol=1e-13)
    assert np.allclose(w1.q, w2.q, rtol=1e-13)
    assert np.allclose(w1.S, w2.S, rtol=1e-13)


def test_transport_keeps_cached_sums_consistent():
    rng = np.random.default_rng(2)
    w = HistoryField.empty(BASIS, KERNEL, 0.1)
    for _ in range(30):
        w.transport(rng.standard_normal(BASIS.size))
    q, S = w.q.copy(), w.S.copy()
    w.refresh()
    assert np.allclose(q, w.q, rtol=1e-12)
    assert np.allclose(S, w.S, rtol=1e-12, atol=1e-12)


def test_snapshot_round_trip(tmp_path):
    past = PastHistory.single(e1(), Profile("trig", omega=1.3))
    w, _, _ = init_history(past, BASIS, KERNEL, 0.2)
    path = tmp_path / "w.bin"
    write_snapshot(path, w)
    raw = path.read_bytes()
    M, n, ds = struct.unpack_from("<qqd", raw)
    assert (M, n, ds) == (w.n_nodes - 1, BASIS.size, 0.2)
    assert len(raw) == 24 + 8 * (M + 1) * (2 + n)
    s, omega, W, ds2 = read_snapshot(path)
    assert np.array_equal(s, w.s) and np.array_equal(omega, w.omega)
    assert np.array_equal(W, w.W) and ds2 == 0.2
