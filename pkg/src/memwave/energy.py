"""Energy functionals, the term-by-term identity ledger and Gronwall ceilings.

The ledger accumulates, by the trapezoid rule in time,

* ``D_g``  = int_0^t int g(v) v
* ``D_mu`` = -1/2 int_0^t int_0^inf ||grad w||^2 mu'(s) ds
* ``W_f``  = int_0^t int f(u) v

and reports ``R = E(t) + D_g + D_mu - E(0) - W_f``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Diagnostics", "EnergyLedger", "LedgerError", "step_diagnostics", "quadratic_energy",
    "modified_energy", "identity_residual", "weak_form_residual", "gronwall_bound",
    "difference_energy", "global_constants", "global_ceiling", "LEDGER_COLUMNS",
]

LEDGER_COLUMNS = ("t", "E", "modE", "D_g", "D_mu", "W_f", "residual")


class LedgerError(RuntimeError):
    """A cumulative dissipation decreased (nonnegative integrand violated)."""


def quadratic_energy(state) -> float:
    """``1/2 (||v||^2 + ||grad u||^2 + sum_i omega_i ||grad w(s_i)||^2)``."""
    lam = state.basis.eigenvalues
    u, v = state.u, state.v
    return 0.5 * float(np.dot(v, v) + np.dot(lam * u, u) + state.w.norm_mu_sq())


def _lp_power(basis, u, q):
    Q = basis.quad_for_power(q)
    return float(basis.integrate(np.abs(basis.to_nodal(u, Q)) ** q, Q))


def modified_energy(state, p: float) -> float:
    """``E + ||u||_{p+1}^{p+1} / (p+1)``."""
    return quadratic_energy(state) + _lp_power(state.basis, state.u, p + 1.0) / (p + 1.0)


def difference_energy(s1, s2) -> float:
    """Quadratic energy of ``(u1 - u2, v1 - v2, w1 - w2)``."""
    lam = s1.basis.eigenvalues
    du, dv = s1.u - s2.u, s1.v - s2.v
    dW = s1.w.W - s2.w.W
    q = np.einsum("ij,ij,j->i", dW, dW, lam)
    return 0.5 * float(np.dot(dv, dv) + np.dot(lam * du, du) + s1.w.omega @ q)


@dataclass
class Diagnostics:
    """Instantaneous energies and the integrands of the ledger at one time."""

    E: float
    modified: float
    G: float                   # int g(v) v
    Wr: float                  # int f(u) v (active source)
    Dr: float                  # -1/2 int ||grad w||^2 mu'
    g_proj: Optional[np.ndarray] = None
    f_proj: Optional[np.ndarray] = None


def step_diagnostics(state, model, cfg, projections: bool = False) -> Diagnostics:
    from .solver import source_nodal

    basis = model.basis
    E = quadratic_energy(state)
    modE = E + _lp_power(basis, state.u, model.source.p + 1.0) / (model.source.p + 1.0)
    vn = basis.to_nodal(state.v)
    gv = model.damping.g(vn)
    G = float(basis.integrate(gv * vn))
    if model.source.shape == "zero":
        fu = np.zeros_like(vn)
        Wr = 0.0
    else:
        fu = source_nodal(model, cfg, state.u)
        Wr = float(basis.integrate(fu * vn))
    Dr = state.w.dissipation_rate()
    if projections:
        return Diagnostics(E, modE, G, Wr, Dr, basis.to_coeffs(gv), basis.to_coeffs(fu))
    return Diagnostics(E, modE, G, Wr, Dr)


@dataclass
class EnergyLedger:
    """Per-step records ``(t, E, modE, D_g, D_mu, W_f, residual)``."""

    rows: list = field(default_factory=list)
    strict: bool = True

    def start(self, t: float, d: Diagnostics):
        self.rows = [(t, d.E, d.modified, 0.0, 0.0, 0.0, 0.0)]
        self._last = (t, d.G, d.Dr, d.Wr)

    def append(self, t: float, d: Diagnostics):
        if not self.rows:
            raise LedgerError("ledger not started")
        t0, G0, Dr0, W0 = self._last
        h = 0.5 * (t - t0)
        prev = self.rows[-1]
        dg_inc, dmu_inc = h * (G0 + d.G), h * (Dr0 + d.Dr)
        if self.strict and (dg_inc < -1e-14 * (1.0 + prev[3]) or dmu_inc < -1e-14 * (1.0 + prev[4])):
            raise LedgerError(f"cumulative dissipation decreased at t={t:.6g}")
        Dg = prev[3] + dg_inc
        Dmu = prev[4] + dmu_inc
        Wf = prev[5] + h * (W0 + d.Wr)
        E0 = self.rows[0][1]
        R = d.E + Dg + Dmu - E0 - Wf
        self.rows.append((t, d.E, d.modified, Dg, Dmu, Wf, R))
        self._last = (t, d.G, d.Dr, d.Wr)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[LEDGER_COLUMNS.index(name)] for r in self.rows])

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(LEDGER_COLUMNS))

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.column("residual")))) if self.rows else 0.0

    def energy_inequality_violation(self) -> float:
        """``max_t [E + D_g - E(0) - W_f] / (1 + E(0))`` (should be <= 1e-8)."""
        a = self.as_array()
        if a.size == 0:
            return 0.0
        E0 = a[0, 1]
        return float(np.max((a[:, 1] + a[:, 3] - E0 - a[:, 5]) / (1.0 + E0)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(LEDGER_COLUMNS)
            for r in self.rows:
                wr.writerow(["%.17g" % x for x in r])


def identity_residual(row) -> float:
    """Signed residual of a ledger row (tuple or mapping)."""
    if isinstance(row, dict):
        return float(row["residual"])
    return float(row[LEDGER_COLUMNS.index("residual")])


def _trap(y, t):
    y = np.asarray(y, dtype=float)
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(t) * (y[1:] + y[:-1])))


def weak_form_residual(records, phi, profile=None, t=None) -> float:
    """Residual of the variational identity tested against ``phi``.

    ``records`` is the dict from ``run(..., record=True)``. ``phi`` is either
    a :class:`~memwave.spectral.Field` combined with a time ``profile``
    (object with ``value(t)`` and ``deriv(t)``), or an array of coefficient
    vectors, one per recorded time, in which case its time derivative is taken
    by second-order finite differences. Evaluates

        (v(t), phi(t)) - (v(0), phi(0)) - int (v, phi_t)
        + int [(grad u, grad phi) + sum_i omega_i (grad w_i, grad phi)
               + (g(v), phi) - (f(u), phi)]

    by the trapezoid rule up to ``t`` (default: last record).
    """
    from .spectral import Field

    ts = np.asarray(records["t"], dtype=float)
    if t is not None:
        k = int(np.argmin(np.abs(ts - t)))
        if abs(ts[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError("t is not a recorded time")
        sl = slice(0, k + 1)
    else:
        sl = slice(None)
    ts = ts[sl]
    u, v = records["u"][sl], records["v"][sl]
    mem, g, f = records["memsum"][sl], records["g"][sl], records["f"][sl]
    size = u.shape[1]
    if isinstance(phi, Field):
        if profile is None:
            raise ValueError("a spatial test function needs a time profile")
        if phi.coeffs.shape != (size,) or not np.all(np.isfinite(phi.coeffs)):
            raise ValueError("test function does not match the basis")
        lam = phi.basis.eigenvalues
        th = np.asarray(profile.value(ts), dtype=float) * np.ones_like(ts)
        dth = np.asarray(profile.deriv(ts), dtype=float) * np.ones_like(ts)
        P = th[:, None] * phi.coeffs[None, :]
        Pt = dth[:, None] * phi.coeffs[None, :]
    else:
        P = np.asarray(phi, dtype=float)
        if P.shape != u.shape or not np.all(np.isfinite(P)):
            raise ValueError("test function array does not match the records")
        if len(ts) < 3:
            raise ValueError("need at least three records to differentiate phi")
        Pt = np.gradient(P, ts, axis=0, edge_order=2)
        lam = _eigs_from_records(records)
    inner = np.einsum("kj,kj->k", lam * (u + mem), P) + np.einsum("kj,kj->k", g - f, P)
    res = float(np.dot(v[-1], P[-1]) - np.dot(v[0], P[0]))
    res -= _trap(np.einsum("kj,kj->k", v, Pt), ts)
    res += _trap(inner, ts)
    return res


def _eigs_from_records(records):
    lam = records.get("eigenvalues")
    if lam is None:
        raise ValueError("records carry no eigenvalues; pass phi as a Field")
    return np.asarray(lam)


def gronwall_bound(E0: float, C0: float, C: float, t, horizon: float):
    """``(E0 + C0 * horizon) * exp(C * t)``."""
    return (E0 + C0 * horizon) * np.exp(C * np.asarray(t, dtype=float))


@dataclass
class GlobalConstants:
    C1: float
    C2: float
    factors: dict


def global_constants(model) -> GlobalConstants:
    """Constants of ``d/dt modE <= C2 + C1 modE`` for m >= p.

    Chain: ``|f(s)| + |s|^p <= A|s|^p + B`` with ``A = 2C + 1``,
    ``B = |f(0)| + 2C``; Young with eps = a/2 against the damping
    lower bound; ``|u|^{p r'} <= 1 + |u|^{p+1}`` (needs p r' <= p + 1,
    i.e. m >= p). Returns infinite constants when the chain does not apply.
    """
    from .solver import young_constant

    m, a = model.damping.m, model.damping.a
    p, C = model.source.p, model.source.C
    if model.damping.shape == "zero" or a <= 0 or m < p:
        return GlobalConstants(math.inf, math.inf, {"applies": False})
    vol = model.basis.volume
    rp = (m + 1.0) / m
    A = 2.0 * C + 1.0
    B = abs(model.source.f0) + 2.0 * C
    Ce = young_constant(0.5 * a, m + 1.0)
    split = 2.0 ** (rp - 1.0)
    C1 = Ce * split * A ** rp * (p + 1.0)
    C2 = a * vol + Ce * split * (A ** rp + B ** rp) * vol
    return GlobalConstants(C1, C2, {"applies": True, "A": A, "B": B, "C_eps": Ce,
                                    "2^(r'-1)": split, "r'": rp})


def global_ceiling(modE0: float, consts: GlobalConstants, t, horizon: float):
    """``(modE(0) + C2 * horizon) * exp(C1 * t)``."""
    return gronwall_bound(modE0, consts.C2, consts.C1, t, horizon)
