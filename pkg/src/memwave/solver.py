"""Time stepping for the displacement/velocity/history system.

One step is a Strang composition

    damping(dt/2) -> wave+memory+source(dt) -> damping(dt/2)

The damping half-steps apply the implicit midpoint rule pointwise on the
quadrature grid, i.e. the resolvent of ``v -> v + (dt/4) g(v)``. The wave
substep is the implicit midpoint rule for the linear stiffness and memory
terms (closed form per mode), with the source explicit at a predicted
midpoint and the history advanced by the exact characteristic shift.

The memory force uses the fixed-s average ``(w^n_i + w^{n+1}_i)/2`` plus the
correction ``(dt/8) omega_1 ybar``; with it the discrete quadratic energy
changes by exactly ``-1/2 sum_i (omega_i - omega_{i+1}) ||grad(w^n_i + dt ybar/2)||^2``
plus the source work, so it never increases when f = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from ._pykernels import ResolventError, resolve_damping
from .history import HistoryField, PastHistory, RingBuffer, init_history
from .model import DampingSpec, MemoryKernel, SourceSpec, cutoff_eta
from .spectral import Field, SpectralBasis

__all__ = [
    "Model", "StepperConfig", "SimState", "BlowUpSignal", "ResolventError",
    "resolvent_damping", "init_state", "source_nodal", "step", "run", "RunResult",
    "LocalTimeCertificate", "estimate_local_time", "sample_lipschitz",
    "accretivity_check", "young_constant",
]


@dataclass(frozen=True, eq=False)
class Model:
    basis: SpectralBasis
    kernel: MemoryKernel
    damping: DampingSpec
    source: SourceSpec


@dataclass
class StepperConfig:
    """Stepper knobs. ``source_mode`` is 'full', 'truncated' (needs K) or 'cutoff' (needs n)."""

    dt: float
    scheme: str = "imex-midpoint"
    tol: float = 1e-13
    max_iter: int = 100
    source_mode: str = "full"
    K: Optional[float] = None
    n: Optional[float] = None
    backend: str = "auto"
    blowup_threshold: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme != "imex-midpoint":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.source_mode not in ("full", "truncated", "cutoff"):
            raise ValueError(f"unknown source mode {self.source_mode!r}")
        if self.source_mode == "truncated" and not (self.K and self.K > 0):
            raise ValueError("truncated source needs K > 0")
        if self.source_mode == "cutoff" and not (self.n and self.n > 0):
            raise ValueError("cutoff source needs n > 0")


@dataclass(eq=False)
class SimState:
    """Phase-space point (u, v, w) at time t plus the lagged-displacement buffer."""

    t: float
    u: np.ndarray
    v: np.ndarray
    w: HistoryField
    ring: RingBuffer
    n_steps: int = 0
    max_resolvent_residual: float = 0.0

    @property
    def basis(self) -> SpectralBasis:
        return self.w.basis

    @property
    def u_field(self) -> Field:
        return Field(self.basis, self.u)

    @property
    def v_field(self) -> Field:
        return Field(self.basis, self.v)

    def copy(self):
        return SimState(self.t, self.u.copy(), self.v.copy(), self.w.copy(),
                        self.ring.copy(), self.n_steps, self.max_resolvent_residual)


class BlowUpSignal(Exception):
    """Blow-up indicator: nonfinite state or modified energy above threshold."""

    def __init__(self, t, modified_energy, reason):
        super().__init__(f"blow-up indicator at t={t:.6g}: {reason} "
                         f"(modified energy {modified_energy:.6g})")
        self.t = t
        self.modified_energy = modified_energy
        self.reason = reason


# ---------------------------------------------------------------------------
# pointwise pieces
# ---------------------------------------------------------------------------

def resolvent_damping(r, lam: float, damping: DampingSpec, tol=1e-13, max_iter=100,
                      backend="auto"):
    """Solve ``v + lam*g(v) = r`` pointwise. Returns ``(v, scaled_residual)``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    if damping.shape == "zero":
        return np.array(r, dtype=float), 0.0
    if damping.shape == "power" and damping.m >= 1.0:
        return kernels.get(backend).resolve_power(r, lam, float(damping.m), tol, max_iter)
    return resolve_damping(r, lam, damping.g, damping.dg, tol, max_iter)


def source_nodal(model: Model, cfg: StepperConfig, u):
    """Nodal values of the active source (full, f_K or f_n) at displacement ``u``."""
    basis = model.basis
    nodal = basis.to_nodal(u)
    if cfg.source_mode == "truncated":
        grad = math.sqrt(float(np.dot(basis.eigenvalues * u, u)))
        if grad > cfg.K:
            nodal = nodal * (cfg.K / grad)
        return model.source.f(nodal)
    if cfg.source_mode == "cutoff":
        return model.source.f(nodal) * cutoff_eta(cfg.n, nodal)
    return model.source.f(nodal)


def _damp(v, dt, model, cfg, state):
    """Pointwise implicit-midpoint damping over dt/2."""
    if model.damping.shape == "zero":
        return v
    basis = model.basis
    nodal = basis.to_nodal(v)
    y, res = resolvent_damping(nodal, 0.25 * dt, model.damping, cfg.tol, cfg.max_iter,
                               cfg.backend)
    state.max_resolvent_residual = max(state.max_resolvent_residual, res)
    return basis.to_coeffs(2.0 * y - nodal)


def init_state(past: PastHistory, model: Model, dt: float) -> SimState:
    w, u0, v0 = init_history(past, model.basis, model.kernel, dt)
    ring = RingBuffer(past.u(-w.s))
    return SimState(0.0, u0.coeffs.copy(), v0.coeffs.copy(), w, ring)


def step(state: SimState, cfg: StepperConfig, model: Model) -> SimState:
    """Advance ``state`` by one step in place and return it."""
    dt = cfg.dt
    w = state.w
    if abs(w.ds - dt) > 1e-12 * max(1.0, dt):
        raise ValueError("stepper dt must equal the history grid spacing")
    lam = model.basis.eigenvalues
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.v))):
        raise BlowUpSignal(state.t, math.inf, "nonfinite state")

    va = _damp(state.v, dt, model, cfg, state)
    u = state.u
    if model.source.shape == "zero":
        F = 0.0
    else:
        F = model.basis.to_coeffs(source_nodal(model, cfg, u + 0.5 * dt * va))
    om = w.omega
    om1 = om[1] if om.size > 1 else 0.0
    denom = 2.0 + 0.5 * dt * dt * lam * (1.0 + w.omega_total + 0.25 * om1)
    ybar = (2.0 * va - dt * lam * (u + w.S) + dt * F) / denom
    vb = 2.0 * ybar - va
    du = dt * ybar
    state.u = u + du
    w.transport(du, cfg.backend)
    state.v = _damp(vb, dt, model, cfg, state)
    state.ring.push(state.u)
    state.n_steps += 1
    state.t = state.n_steps * dt
    return state


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    state: SimState
    ledger: object
    blowup: Optional[BlowUpSignal] = None
    records: Optional[dict] = None

    @property
    def blew_up(self) -> bool:
        return self.blowup is not None


def run(state: SimState, cfg: StepperConfig, model: Model, t_end: float, ledger=None,
        record: bool = False, callback=None) -> RunResult:
    """Step to ``t_end`` (or until the blow-up indicator fires).

    The ledger receives one row per step. With ``record`` the per-step data
    needed by the weak-form audit is kept (u, v, memory sum, projected g(v)
    and f(u)). ``callback(state)`` is invoked after every step.
    """
    from .energy import EnergyLedger, step_diagnostics

    if ledger is None:
        ledger = EnergyLedger()
    n_total = int(round(t_end / cfg.dt))
    recs = {"t": [], "u": [], "v": [], "memsum": [], "g": [], "f": []} if record else None

    def snap(st, diag):
        if recs is None:
            return
        recs["t"].append(st.t)
        recs["u"].append(st.u.copy())
        recs["v"].append(st.v.copy())
        recs["memsum"].append(st.w.memory_sum())
        recs["g"].append(diag.g_proj)
        recs["f"].append(diag.f_proj)

    diag = step_diagnostics(state, model, cfg, projections=record)
    if not ledger.rows:
        ledger.start(state.t, diag)
    snap(state, diag)
    blow = None
    for _ in range(max(0, n_total - state.n_steps)):
        try:
            step(state, cfg, model)
        except BlowUpSignal as sig:
            blow = sig
            break
        except (ResolventError, FloatingPointError, OverflowError) as exc:
            blow = BlowUpSignal(state.t, math.inf, f"numerical failure: {exc}")
            break
        with np.errstate(over="ignore", invalid="ignore"):
            diag = step_diagnostics(state, model, cfg, projections=record)
        if not np.isfinite(diag.modified) or not np.all(np.isfinite(state.u)):
            blow = BlowUpSignal(state.t, float(diag.modified), "nonfinite values")
            break
        ledger.append(state.t, diag)
        snap(state, diag)
        if callback is not None:
            callback(state)
        if diag.modified > cfg.blowup_threshold:
            blow = BlowUpSignal(state.t, diag.modified, "modified energy above threshold")
            break
    if recs is not None:
        recs = {k: np.array(v) for k, v in recs.items()}
        recs["eigenvalues"] = model.basis.eigenvalues
    return RunResult(state, ledger, blow, recs)


# ---------------------------------------------------------------------------
# local-existence certificate
# ---------------------------------------------------------------------------

def young_constant(eps: float, r: float) -> float:
    """Smallest C with ``xy <= eps x^r + C y^(r/(r-1))`` for x, y >= 0."""
    rp = r / (r - 1.0)
    return (eps * r) ** (-1.0 / (r - 1.0)) / rp


def _random_directions(rng, basis, n, smooth=True):
    lam = basis.eigenvalues
    z = rng.standard_normal((n, basis.size))
    z = z / lam if smooth else z / np.sqrt(lam)
    gn = np.sqrt(np.einsum("ij,ij,j->i", z, z, lam))
    return z / gn[:, None]


def _into_ball(x, K, lam):
    gn = np.sqrt(np.einsum("ij,ij,j->i", x, x, lam))
    over = gn > K
    x[over] *= (K / gn[over])[:, None]
    return x


def sample_lipschitz(model: Model, K: float, n_samples: int, rng, target_q=None,
                     batch=2000, elite=16) -> float:
    """Largest sampled ``||f_K(u) - f_K(uh)||_q / ||grad(u - uh)||_2`` over the ball of radius K.

    ``target_q`` defaults to the damping-dual exponent (m+1)/m; use 2 for the
    H1_0 -> L2 constant. Four fifths of the budget are random pairs (radius
    biased towards K, smooth or rough directions); the rest refines the best
    pairs by shrinking random perturbations. Every evaluated pair lies in the
    ball, so the result is a lower estimate of the true constant.
    """
    basis = model.basis
    lam = basis.eigenvalues
    m = model.damping.m
    q = (m + 1.0) / m if target_q is None else target_q
    Qg = basis.quad_for_power(max(q, 2.0) * max(model.source.p, 1.0))

    def quotient(u, uh):
        diff = u - uh
        den = np.sqrt(np.einsum("ij,ij,j->i", diff, diff, lam))
        fu = model.source.f(basis.to_nodal(u, Qg))
        fh = model.source.f(basis.to_nodal(uh, Qg))
        num = basis.integrate(np.abs(fu - fh) ** q, Qg) ** (1.0 / q)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def directions(n):
        smooth = rng.random(n) < 0.75
        d = _random_directions(rng, basis, n, True)
        d[~smooth] = _random_directions(rng, basis, int((~smooth).sum()), False)
        return d

    n_random = max(1, n_samples - n_samples // 5)
    keep_u = np.empty((0, basis.size))
    keep_h = np.empty((0, basis.size))
    keep_q = np.empty(0)
    done = 0
    while done < n_random:
        nb = min(batch, n_random - done)
        u = directions(nb) * (K * rng.uniform(0.0, 1.0, nb) ** 0.25)[:, None]
        size = K * 10.0 ** rng.uniform(-4.0, 0.0, nb)
        uh = _into_ball(u + directions(nb) * size[:, None], K, lam)
        qs = quotient(u, uh)
        keep_u = np.vstack([keep_u, u])
        keep_h = np.vstack([keep_h, uh])
        keep_q = np.concatenate([keep_q, qs])
        top = np.argsort(keep_q)[-elite:]
        keep_u, keep_h, keep_q = keep_u[top], keep_h[top], keep_q[top]
        done += nb
    remaining = n_samples - done
    sigma = 0.1
    while remaining > 0:
        nb = min(elite, remaining)
        pick = rng.integers(0, keep_q.size, nb)
        u0, h0 = keep_u[pick], keep_h[pick]
        d0 = h0 - u0
        dn = np.sqrt(np.einsum("ij,ij,j->i", d0, d0, lam))[:, None]
        u = _into_ball(u0 + sigma * K * directions(nb), K, lam)
        uh = _into_ball(u + d0 * np.exp(sigma * rng.standard_normal(nb))[:, None]
                        + sigma * dn * directions(nb), K, lam)
        qs = quotient(u, uh)
        better = qs > keep_q[pick]
        for i in np.nonzero(better)[0]:
            j = pick[i]
            if qs[i] > keep_q[j]:
                keep_u[j], keep_h[j], keep_q[j] = u[i], uh[i], qs[i]
        sigma = max(1e-3, sigma * 0.97)
        remaining -= nb
    return float(keep_q.max()) if keep_q.size else 0.0


@dataclass
class LocalTimeCertificate:
    """Local-existence time from the a-priori energy chain, with its factors."""

    E0: float
    K: float
    T: float
    L_K: float
    C_eps: float
    C0: float
    C_LK: float
    eps: float
    n_samples: int
    factors: dict = field(default_factory=dict)


def estimate_local_time(E0: float, model: Model, n_samples: int = 10_000, rng=None,
                        K: Optional[float] = None) -> LocalTimeCertificate:
    """K = 2 sqrt(E0 + 1) (smallest admissible) and T = min(1/C0, log 2 / C(L_K)).

    Constants follow the chain: Hoelder/Young with eps = a on the source work,
    ``||f_K(u)||^{r'} <= 2^{r'-1}(L_K^{r'} ||grad u||^{r'} + |f(0)|^{r'} |Omega|)``
    with r' = (m+1)/m, ``||grad u||^{r'} <= 1 + 2E`` and the damping lower bound
    ``int g(v)v >= a||v||_{m+1}^{m+1} - a|Omega|``. The result is a
    conservative certificate, not a sharp existence time.
    """
    if E0 < 0:
        raise ValueError("E0 must be nonnegative")
    rng = np.random.default_rng(rng)
    if K is None:
        K = 2.0 * math.sqrt(E0 + 1.0)
    m = model.damping.m
    a = model.damping.a
    rp = (m + 1.0) / m
    vol = model.basis.volume
    L_K = sample_lipschitz(model, K, n_samples, rng)
    eps = a
    C_eps = young_constant(eps, m + 1.0)
    split = 2.0 ** (rp - 1.0)
    f0 = abs(model.source.f0)
    C_LK = 2.0 * C_eps * split * L_K ** rp
    C0 = a * vol + C_eps * split * (L_K ** rp + f0 ** rp * vol)
    T = min(1.0 / C0 if C0 > 0 else math.inf, math.log(2.0) / C_LK if C_LK > 0 else math.inf)
    factors = {"a|Omega|": a * vol, "C_eps": C_eps, "2^(r'-1)": split,
               "L_K^r'": L_K ** rp, "|f(0)|^r'|Omega|": f0 ** rp * vol, "r'": rp}
    return LocalTimeCertificate(E0, K, T, L_K, C_eps, C0, C_LK, eps, n_samples, factors)


# ---------------------------------------------------------------------------
# discrete accretivity pairing
# ---------------------------------------------------------------------------

def accretivity_check(U, Uh, alpha: float, model: Model, hist: HistoryField, source_fn=None):
    """Discrete ``((A + alpha I)U - (A + alpha I)Uh, U - Uh)_H``.

    ``U`` and ``Uh`` are triples ``(u, v, W)`` of coefficient arrays, with
    ``W`` on the grid of ``hist`` and ``W[0] = 0``. ``w_s`` is the backward
    difference on the s-grid. ``source_fn`` maps displacement coefficients to
    nodal source values (None switches the source off). Returns
    ``(value, ||U - Uh||_H^2)``.
    """
    u, v, W = (np.asarray(x, dtype=float) for x in U)
    uh, vh, Wh = (np.asarray(x, dtype=float) for x in Uh)
    if W.shape != hist.W.shape or Wh.shape != hist.W.shape:
        raise ValueError("history arrays do not match the s-grid")
    if u.shape != (model.basis.size,) or uh.shape != u.shape:
        raise ValueError("state vectors do not match the basis")
    basis = model.basis
    lam = basis.eigenvalues
    om = hist.omega
    du, dv, dW = u - uh, v - vh, W - Wh
    dW = dW.copy()
    dW[0] = 0.0

    stiff = -np.dot(lam * dv, du) + np.dot(lam * du, dv)
    vn, vhn = basis.to_nodal(v), basis.to_nodal(vh)
    damp = float(basis.integrate((model.damping.g(vn) - model.damping.g(vhn)) * (vn - vhn)))
    memsum = om @ dW
    mem_dual = float(np.dot(lam * memsum, dv))          # -<L(dw), dv>
    mem_trans = -float(np.dot(lam * dv, memsum))        # -(dv, dw)_mu
    if source_fn is None:
        src = 0.0
    else:
        src = -float(basis.integrate((source_fn(u) - source_fn(uh)) * basis.to_nodal(dv)))
    back = np.zeros_like(dW)
    back[1:] = (dW[1:] - dW[:-1]) / hist.ds
    ws = float(np.sum(om * np.einsum("ij,ij,j->i", back, dW, lam)))
    normH = float(np.dot(lam * du, du) + np.dot(dv, dv)
                  + om @ np.einsum("ij,ij,j->i", dW, dW, lam))
    value = stiff + damp + mem_dual + mem_trans + src + ws + alpha * normH
    return value, normH
