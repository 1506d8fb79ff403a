"""History variable w(t, s) = u(t) - u(t - s) on a uniform s-grid.

The grid uses ``ds = dt`` so that transport along characteristics is an exact
row shift. Weights are product-integration (hat function) weights of mu, so
``sum(omega)`` reproduces the truncated kernel mass.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from . import kernels
from .model import MemoryKernel
from .spectral import Field, SpectralBasis

__all__ = [
    "Profile", "PastHistory", "HistoryField", "TrajectoryGapError", "UTrajectory",
    "RingBuffer", "PronyConvolution", "n_history_nodes", "init_history",
    "memory_operator", "mu_inner", "advance_history", "direct_convolution_oracle",
    "reconstruct_check", "write_snapshot", "read_snapshot",
]


class TrajectoryGapError(LookupError):
    """A requested time is not covered by the stored trajectory."""


# ---------------------------------------------------------------------------
# closed-form past histories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Scalar time profile: ``trig`` A cos(omega t + phase), ``poly`` sum a_k t^k,
    ``exp`` exp(rate t), ``const`` 1."""

    kind: str = "const"
    omega: float = 1.0
    phase: float = 0.0
    rate: float = 1.0
    poly: tuple = (1.0,)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "trig":
            return np.cos(self.omega * t + self.phase)
        if self.kind == "exp":
            return np.exp(self.rate * t)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(t, self.poly)
        if self.kind == "const":
            return np.ones_like(t)
        raise ValueError(f"unknown profile {self.kind!r}")

    def deriv(self, t, order=1):
        t = np.asarray(t, dtype=float)
        if self.kind == "trig":
            return self.omega ** order * np.cos(self.omega * t + self.phase + order * math.pi / 2)
        if self.kind == "exp":
            return self.rate ** order * np.exp(self.rate * t)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(
                t, np.polynomial.polynomial.polyder(self.poly, order))
        if self.kind == "const":
            return np.zeros_like(t)
        raise ValueError(f"unknown profile {self.kind!r}")


@dataclass(frozen=True)
class PastHistory:
    """``u0(x, t) = sum_k profile_k(t) * phi_k(x)`` with ``phi_k`` given by coefficients.

    Also serves as a closed-form trajectory for t > 0 in the transport tests.
    """

    terms: tuple = ()
    size: int = 0

    @classmethod
    def zero(cls, size):
        return cls((), size)

    @classmethod
    def single(cls, coeffs, profile):
        c = np.asarray(coeffs, dtype=float)
        return cls(((c, profile),), c.size)

    def __add__(self, other):
        return PastHistory(self.terms + other.terms, self.size)

    def scaled(self, a):
        return PastHistory(tuple((c * a, pr) for c, pr in self.terms), self.size)

    def u(self, t, order=0):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.size,))
        for c, pr in self.terms:
            prof = pr.value(t) if order == 0 else pr.deriv(t, order)
            out += np.multiply.outer(prof, c)
        return out

    def v(self, t):
        return self.u(t, order=1)


# ---------------------------------------------------------------------------
# history field
# ---------------------------------------------------------------------------

def n_history_nodes(kernel: MemoryKernel, ds: float) -> int:
    """Number of s-nodes (including s = 0) covering ``[0, s_max]``."""
    if kernel.family == "none":
        return 1
    return int(math.ceil(kernel.s_max / ds - 1e-9)) + 1


@dataclass(eq=False)
class HistoryField:
    """Rows ``W[i]`` hold the coefficients of ``w(., s_i)``, ``s_i = i*ds``.

    ``omega`` are the mu-weights, ``psi`` the (-mu')-weights used for the
    kernel dissipation, ``c`` the weights of the one-step averaged sum
    ``sum_i omega_i (w_i + w_{i-1}) / 2`` used by the stepper.
    """

    basis: SpectralBasis
    kernel: MemoryKernel
    ds: float
    W: np.ndarray
    omega: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)

    def __post_init__(self):
        om = self.omega
        nxt = np.append(om[1:], 0.0)
        self.c = 0.5 * (om + nxt)
        self.c[0] = 0.0
        self.q = np.einsum("ij,ij,j->i", self.W, self.W, self.basis.eigenvalues)
        self.S = self.c @ self.W

    @classmethod
    def empty(cls, basis, kernel, ds):
        n = n_history_nodes(kernel, ds)
        W = np.zeros((n, basis.size))
        return cls(basis, kernel, ds, W, kernel.hat_weights(ds, n),
                   kernel.hat_weights(ds, n, derivative=True))

    @property
    def n_nodes(self) -> int:
        return self.W.shape[0]

    @property
    def s(self) -> np.ndarray:
        return self.ds * np.arange(self.n_nodes)

    @property
    def omega_total(self) -> float:
        return float(self.omega[1:].sum())

    def copy(self):
        h = HistoryField(self.basis, self.kernel, self.ds, self.W.copy(), self.omega, self.psi)
        return h

    def refresh(self):
        """Recompute cached row norms and the averaged sum after editing ``W``."""
        self.q = np.einsum("ij,ij,j->i", self.W, self.W, self.basis.eigenvalues)
        self.S = self.c @ self.W

    def norm_mu_sq(self) -> float:
        """``||w||_mu^2 = sum_i omega_i ||grad w(s_i)||_2^2``."""
        return float(self.omega @ self.q)

    def dissipation_rate(self) -> float:
        """``-1/2 int ||grad w||^2 mu'(s) ds`` on the grid."""
        return 0.5 * float(self.psi @ self.q)

    def memory_sum(self) -> np.ndarray:
        """``sum_i omega_i w(s_i)`` (coefficients of the memory integral)."""
        return self.omega @ self.W

    def transport(self, du, backend="auto"):
        """In-place exact shift with increment ``du`` (coefficients)."""
        k = kernels.get(backend)
        du = np.ascontiguousarray(du, dtype=float)
        k.shift_add(self.W, du, self.c, self.basis.eigenvalues, self.q, self.S)


def init_history(past: PastHistory, basis: SpectralBasis, kernel: MemoryKernel, ds: float):
    """History at t = 0 plus the initial displacement and velocity.

    Returns ``(w, u0, v0)`` with ``w(0, s_i) = u0(0) - u0(-s_i)``.
    """
    if past.size != basis.size:
        raise ValueError("past history does not match the basis size")
    w = HistoryField.empty(basis, kernel, ds)
    s = w.s
    try:
        lagged = past.u(-s)
        u0 = past.u(0.0)
        v0 = past.v(0.0)
    except Exception as exc:  # closed forms should never fail; report cleanly
        raise ValueError(f"past history not evaluable on the s-grid: {exc}") from exc
    if not (np.all(np.isfinite(lagged)) and np.all(np.isfinite(u0)) and np.all(np.isfinite(v0))):
        raise ValueError("past history not finite on the s-grid")
    w.W[:] = u0[None, :] - lagged
    w.W[0] = 0.0
    w.refresh()
    return w, Field(basis, u0), Field(basis, v0)


def memory_operator(w: HistoryField) -> Field:
    """Coefficients of L(w) = sum_i omega_i Laplace w(s_i), i.e. ``-lambda_j sum_i omega_i w_ij``."""
    return Field(w.basis, -w.basis.eigenvalues * w.memory_sum())


def mu_inner(w: HistoryField, phi) -> float:
    """``(w, phi)_mu`` for a history field and a single field (constant in s)."""
    c = phi.coeffs if isinstance(phi, Field) else np.asarray(phi)
    return float(w.memory_sum() @ (w.basis.eigenvalues * c))


def advance_history(w: HistoryField, v_old, v_new, dt: float, u_window=None,
                    backend="auto") -> HistoryField:
    """Return w at t + dt from the exact characteristic shift.

    Rows move one node down the s-grid and gain the trapezoidal integral
    ``dt/2 (v_old + v_new)``. If ``u_window`` is given (rows
    ``u(t+dt) - u(t+dt-s_i)`` for the first ``len(u_window)`` nodes) those rows
    are overwritten by the stored reconstruction.
    """
    if abs(dt - w.ds) > 1e-12 * max(1.0, w.ds):
        raise ValueError(f"exact-shift scheme needs dt == ds (dt={dt}, ds={w.ds})")
    vo = v_old.coeffs if isinstance(v_old, Field) else np.asarray(v_old, dtype=float)
    vn = v_new.coeffs if isinstance(v_new, Field) else np.asarray(v_new, dtype=float)
    out = w.copy()
    out.transport(0.5 * dt * (vo + vn), backend)
    if u_window is not None:
        u_window = np.asarray(u_window, dtype=float)
        k = min(u_window.shape[0], out.n_nodes)
        out.W[:k] = u_window[:k]
        out.W[0] = 0.0
        out.refresh()
    return out


# ---------------------------------------------------------------------------
# stored trajectories and oracles
# ---------------------------------------------------------------------------

class UTrajectory:
    """u(t_k) on ``t_k = k*dt`` for k >= 0, backed by a closed-form past."""

    def __init__(self, dt: float, past: PastHistory):
        self.dt = dt
        self.past = past
        self._rows = []

    def append(self, u):
        self._rows.append(np.array(u.coeffs if isinstance(u, Field) else u, dtype=float))

    def __len__(self):
        return len(self._rows)

    @property
    def t_last(self) -> float:
        return (len(self._rows) - 1) * self.dt

    def u_at(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, self.past.size))
        neg = times <= 0.0
        if neg.any():
            out[neg] = self.past.u(times[neg])
        if (~neg).any():
            k = np.rint(times[~neg] / self.dt).astype(int)
            off = np.abs(k * self.dt - times[~neg]) > 1e-9 * max(self.dt, 1.0)
            if off.any() or k.max() >= len(self._rows):
                raise TrajectoryGapError("trajectory does not cover the requested times")
            out[~neg] = np.array(self._rows)[k]
        return out


class RingBuffer:
    """Last ``n`` displacement coefficient vectors: row i is ``u(t - i*dt)``."""

    def __init__(self, rows_newest_first):
        self.buf = np.array(rows_newest_first, dtype=float)
        self.head = 0                                   # index of u(t)

    @property
    def n(self) -> int:
        return self.buf.shape[0]

    def push(self, u):
        self.head = (self.head - 1) % self.n
        self.buf[self.head] = u

    def lagged(self) -> np.ndarray:
        idx = (self.head + np.arange(self.n)) % self.n
        return self.buf[idx]

    def copy(self):
        r = RingBuffer(self.buf.copy())
        r.head = self.head
        return r


def direct_convolution_oracle(traj: UTrajectory, kernel: MemoryKernel, t: float,
                              eigenvalues):
    """Brute-force ``int_0^{s_max} mu(s) (u(t) - u(t-s)) ds`` and its L-value.

    Uses the stored trajectory (the closed-form past for t - s <= 0) and a
    trapezoid rule on point values of mu over the grid ``s_i = i*dt``.
    Returns ``(integral, -eigenvalues * integral)`` as coefficient vectors.
    """
    ds = traj.dt
    n = n_history_nodes(kernel, ds)
    s = ds * np.arange(n)
    rows = traj.u_at(t - s)
    wts = np.full(n, ds)
    if n > 1:
        wts[0] = wts[-1] = 0.5 * ds
    else:
        wts[:] = 0.0
    integral = (kernel.mu(s) * wts) @ (rows[0][None, :] - rows)
    return integral, -np.asarray(eigenvalues) * integral


class PronyConvolution:
    """Recursive evaluation of the memory integral for prony kernels.

    Keeps ``I_k(t) = int_0^inf exp(-theta_k s) u(t-s) ds`` per term, advanced
    with a piecewise-linear interpolant of u between steps; the integral over
    the whole infinite past is kept (no truncation).
    """

    def __init__(self, kernel: MemoryKernel, past: PastHistory):
        if kernel.family != "prony":
            raise ValueError("recursive convolution needs a prony kernel")
        self.c = np.array(kernel.amplitudes)
        self.theta = np.array(kernel.rates)
        self.kappa = float(np.sum(self.c / self.theta))
        I = []
        for th in self.theta:
            val, _ = integrate.quad_vec(lambda s, th=th: np.exp(-th * s) * past.u(-s),
                                        0.0, np.inf, epsabs=1e-14, epsrel=1e-13)
            I.append(val)
        self.I = np.array(I)

    def advance(self, u_old, u_new, dt):
        x = self.theta * dt
        e = np.exp(-x)
        a0 = -np.expm1(-x) / self.theta
        a1 = (1.0 - e * (1.0 + x)) / self.theta ** 2
        self.I = e[:, None] * self.I + a0[:, None] * u_new[None, :] \
            + (a1 / dt)[:, None] * (u_old - u_new)[None, :]

    def memory_integral(self, u_now):
        return self.kappa * u_now - self.c @ self.I


def reconstruct_check(w: HistoryField, u_now, lagged) -> float:
    """``max_i ||grad(w(s_i) - (u(t) - u(t - s_i)))||_2``."""
    u_now = u_now.coeffs if isinstance(u_now, Field) else np.asarray(u_now)
    lagged = np.asarray(lagged)[: w.n_nodes]
    d = w.W - (u_now[None, :] - lagged)
    return float(np.sqrt(np.max(np.einsum("ij,ij,j->i", d, d, w.basis.eigenvalues))))


# ---------------------------------------------------------------------------
# binary snapshot
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<qqd")


def write_snapshot(path, w: HistoryField):
    """Little-endian dump: header (int64 M, int64 N_total, float64 ds), then
    the s-grid (M+1), the weights (M+1) and the (M+1) x N_total coefficients,
    all float64, row-major. ``M`` is the index of the last node."""
    M = w.n_nodes - 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(M, w.basis.size, w.ds))
        fh.write(np.ascontiguousarray(w.s, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(w.omega, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(w.W, dtype="<f8").tobytes())


def read_snapshot(path):
    """Return ``(s, omega, W, ds)`` from a snapshot file."""
    with open(path, "rb") as fh:
        M, N, ds = _HEADER.unpack(fh.read(_HEADER.size))
        n = M + 1
        s = np.frombuffer(fh.read(8 * n), dtype="<f8")
        om = np.frombuffer(fh.read(8 * n), dtype="<f8")
        W = np.frombuffer(fh.read(8 * n * N), dtype="<f8").reshape(n, N)
    return s.copy(), om.copy(), W.copy(), ds
