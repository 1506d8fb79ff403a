"""Memory kernels, damping and source nonlinearities.

Everything here is a pure function of immutable specs, so the objects can be
shared freely between threads and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "KernelError",
    "SourceRangeError",
    "MemoryKernel",
    "DampingSpec",
    "SourceSpec",
    "Check",
    "ValidationReport",
    "validate_assumptions",
    "kernel_mass",
    "classify_source",
    "eval_damping",
    "eval_source",
    "truncate_source_K",
    "cutoff_eta",
    "cutoff_source_n",
    "CUTOFF_SLOPE_CONST",
]


class KernelError(ValueError):
    """Raised for inadmissible memory kernels (e.g. divergent mass)."""


class SourceRangeError(ValueError):
    """Raised when a source exponent lies outside ``[1, 6)``."""


# ---------------------------------------------------------------------------
# memory kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryKernel:
    """Relaxation kernel mu(s) = -k'(s), normalised so that k(inf) = 1.

    Families
    --------
    ``prony``
        ``mu(s) = sum_k c_k exp(-theta_k s)``.
    ``power``
        ``mu(s) = c (1 + s)^(-alpha)`` truncated at ``s_max``; requires
        ``alpha > 1`` for finite mass.
    ``none``
        No memory (kappa = 0). Useful for conservative reference runs; it
        fails the kernel bullet of :func:`validate_assumptions`.

    ``s_max`` is derived from ``tail_tol`` unless given explicitly: it is the
    smallest horizon with ``mu(s_max) <= tail_tol * mu(0)`` and a dropped tail
    mass of at most ``tail_tol * kappa * s_max``.
    """

    family: str = "prony"
    amplitudes: tuple = (1.0,)
    rates: tuple = (1.0,)
    exponent: float = 3.0
    tail_tol: float = 1e-10
    s_max: Optional[float] = None

    def __post_init__(self):
        fam = self.family
        if fam not in ("prony", "power", "none"):
            raise KernelError(f"unknown kernel family {fam!r}")
        object.__setattr__(self, "amplitudes", tuple(float(c) for c in self.amplitudes))
        object.__setattr__(self, "rates", tuple(float(t) for t in self.rates))
        if fam == "prony":
            if len(self.amplitudes) != len(self.rates) or not self.amplitudes:
                raise KernelError("prony kernel needs matching, non-empty amplitudes and rates")
            if min(self.amplitudes) <= 0 or min(self.rates) <= 0:
                raise KernelError("prony amplitudes and rates must be positive")
        elif fam == "power":
            if len(self.amplitudes) != 1 or self.amplitudes[0] <= 0:
                raise KernelError("power kernel needs a single positive amplitude")
            if self.exponent <= 1.0:
                raise KernelError(
                    f"power decay exponent {self.exponent} <= 1 gives divergent mass")
        if not 0 < self.tail_tol < 1:
            raise KernelError("tail_tol must lie in (0, 1)")
        if self.s_max is None:
            object.__setattr__(self, "s_max", self._auto_horizon())
        elif self.s_max < 0:
            raise KernelError("s_max must be nonnegative")

    # constructors -----------------------------------------------------
    @classmethod
    def prony(cls, amplitudes, rates, tail_tol=1e-10, s_max=None):
        return cls("prony", tuple(amplitudes), tuple(rates), tail_tol=tail_tol, s_max=s_max)

    @classmethod
    def power(cls, amplitude=1.0, exponent=3.0, tail_tol=1e-10, s_max=None):
        return cls("power", (amplitude,), (), exponent=exponent, tail_tol=tail_tol, s_max=s_max)

    @classmethod
    def none(cls):
        return cls("none", (), (), s_max=0.0)

    # pointwise --------------------------------------------------------
    def mu(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "prony":
            c = np.array(self.amplitudes)
            th = np.array(self.rates)
            return np.sum(c * np.exp(-np.multiply.outer(s, th)), axis=-1)
        if self.family == "power":
            return self.amplitudes[0] * (1.0 + s) ** (-self.exponent)
        return np.zeros_like(s)

    def dmu(self, s):
        """Analytic derivative mu'(s)."""
        s = np.asarray(s, dtype=float)
        if self.family == "prony":
            c = np.array(self.amplitudes)
            th = np.array(self.rates)
            return -np.sum(c * th * np.exp(-np.multiply.outer(s, th)), axis=-1)
        if self.family == "power":
            a = self.exponent
            return -a * self.amplitudes[0] * (1.0 + s) ** (-a - 1.0)
        return np.zeros_like(s)

    @property
    def mu0(self) -> float:
        return float(self.mu(0.0))

    @property
    def kappa(self) -> float:
        return kernel_mass(self)

    @property
    def k0(self) -> float:
        return 1.0 + self.kappa

    def tail_mass(self, s) -> float:
        """Mass of mu beyond ``s`` (the part dropped by truncation)."""
        if self.family == "prony":
            return float(sum(c / t * math.exp(-t * s) for c, t in zip(self.amplitudes, self.rates)))
        if self.family == "power":
            a = self.exponent
            return self.amplitudes[0] * (1.0 + s) ** (1.0 - a) / (a - 1.0)
        return 0.0

    def _auto_horizon(self) -> float:
        if self.family == "none":
            return 0.0
        tau = self.tail_tol
        mu0 = self.mu0
        if self.family == "power":
            s1 = tau ** (-1.0 / self.exponent) - 1.0
        else:
            hi = 1.0
            while self.mu(hi) > tau * mu0:
                hi *= 2.0
            s1 = optimize.brentq(lambda s: float(self.mu(s)) - tau * mu0, 0.0, hi, xtol=1e-14)
        full = self._full_mass()

        def tail_excess(s):
            return self.tail_mass(s) - tau * full * s

        if tail_excess(s1) <= 0:
            return float(s1)
        hi = 2.0 * s1
        while tail_excess(hi) > 0:
            hi *= 2.0
        return float(optimize.brentq(tail_excess, s1, hi, xtol=1e-12))

    def _full_mass(self) -> float:
        if self.family == "prony":
            return float(sum(c / t for c, t in zip(self.amplitudes, self.rates)))
        if self.family == "power":
            return self.amplitudes[0] / (self.exponent - 1.0)
        return 0.0

    # quadrature weights on a uniform s-grid -----------------------------
    def hat_weights(self, ds: float, n_nodes: int, derivative: bool = False) -> np.ndarray:
        """Weights ``int rho(s) phi_i(s) ds`` for hat functions on ``i*ds``.

        ``rho`` is mu, or -mu' when ``derivative`` is set. Node 0 and the last
        node carry half hats; the tail beyond the last node is dropped. The
        truncated power family integrates only up to ``s_max``.
        """
        M = n_nodes - 1
        if self.family == "none" or M < 1:
            return np.zeros(n_nodes)
        s = ds * np.arange(n_nodes)
        if self.family == "prony":
            w = np.zeros(n_nodes)
            for c, th in zip(self.amplitudes, self.rates):
                amp = c * th if derivative else c
                x = th * ds
                e = np.exp(-th * s)
                inner = 4.0 * np.sinh(0.5 * x) ** 2 / (th * x)          # full hat
                left = (np.expm1(x) - x) / (th * x)                    # hat on [s_i - ds, s_i]
                right = (x - 1.0 + np.exp(-x)) / (th * x) if x > 1e-4 else \
                    (x / 2 - x * x / 6 + x ** 3 / 24) / th             # hat on [s_i, s_i + ds]
                wk = e * inner
                wk[0] = right
                wk[-1] = e[-1] * left
                w += amp * wk
            return w
        # generic: Gauss-Legendre on each half-cell
        rho = (lambda x: -self.dmu(x)) if derivative else self.mu
        xg, wg = np.polynomial.legendre.leggauss(8)
        r = 0.5 * (xg + 1.0)                                           # nodes on [0,1]
        wq = 0.5 * wg
        cells = s[:-1]
        hi = cells + ds
        if self.family == "power":
            hi = np.minimum(hi, self.s_max)                            # the kernel stops at s_max
        width = np.maximum(hi - cells, 0.0)
        pts = cells[:, None] + width[:, None] * r[None, :]
        vals = rho(pts) * width[:, None] * wq[None, :]
        frac = (pts - cells[:, None]) / ds                             # hat coordinate in the cell
        right_part = (vals * (1.0 - frac)).sum(axis=1)                 # contribution to left node
        left_part = (vals * frac).sum(axis=1)                          # contribution to right node
        w = np.zeros(n_nodes)
        w[:-1] += right_part
        w[1:] += left_part
        return w


def kernel_mass(kernel: MemoryKernel) -> float:
    """Mass kappa = int_0^inf mu(s) ds = k(0) - 1.

    Exact for prony sums; for the truncated power family the integral runs over
    ``[0, s_max]`` by adaptive quadrature.
    """
    if kernel.family == "prony":
        return float(sum(c / t for c, t in zip(kernel.amplitudes, kernel.rates)))
    if kernel.family == "power":
        if kernel.exponent <= 1.0:
            raise KernelError("divergent kernel mass")
        val, _ = integrate.quad(lambda s: float(kernel.mu(s)), 0.0, kernel.s_max,
                                limit=400, epsabs=1e-14, epsrel=1e-13)
        return float(val)
    return 0.0


# ---------------------------------------------------------------------------
# damping and source
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DampingSpec:
    """Monotone feedback g with growth ``a|s|^(m+1) <= g(s)s <= b|s|^(m+1)``.

    ``shape='power'`` is ``g(s) = s|s|^(m-1)`` (attains the bounds with
    a = b = 1), ``'zero'`` switches damping off and ``'custom'`` uses the
    supplied callables.
    """

    m: float = 3.0
    a: float = 1.0
    b: float = 1.0
    shape: str = "power"
    func: Optional[Callable] = field(default=None, compare=False)
    deriv: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.shape not in ("power", "zero", "custom"):
            raise ValueError(f"unknown damping shape {self.shape!r}")
        if self.shape == "custom" and (self.func is None or self.deriv is None):
            raise ValueError("custom damping needs func and deriv")

    def g(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "power":
            if self.m == 1.0:
                return s.copy()
            return s * np.abs(s) ** (self.m - 1.0)
        if self.shape == "zero":
            return np.zeros_like(s)
        return np.asarray(self.func(s), dtype=float)

    def dg(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "power":
            if self.m == 1.0:
                return np.ones_like(s)
            return self.m * np.abs(s) ** (self.m - 1.0)
        if self.shape == "zero":
            return np.zeros_like(s)
        return np.asarray(self.deriv(s), dtype=float)


@dataclass(frozen=True)
class SourceSpec:
    """Source f with ``|f'(s)| <= C(|s|^(p-1) + 1)``.

    ``shape='power'`` is ``f(s) = sign * |s|^(p-1) s``; ``sign=-1`` gives the
    dissipative-sign variant. ``'zero'`` switches the source off.
    """

    p: float = 3.0
    C: Optional[float] = None
    sign: float = 1.0
    shape: str = "power"
    func: Optional[Callable] = field(default=None, compare=False)
    deriv: Optional[Callable] = field(default=None, compare=False)
    deriv2: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.shape not in ("power", "zero", "custom"):
            raise ValueError(f"unknown source shape {self.shape!r}")
        if self.C is None:
            object.__setattr__(self, "C", float(self.p))
        if self.shape == "custom" and (self.func is None or self.deriv is None):
            raise ValueError("custom source needs func and deriv")

    @classmethod
    def zero(cls, p=3.0):
        return cls(p=p, shape="zero")

    @property
    def criticality(self) -> str:
        return classify_source(self.p)

    def f(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "power":
            if self.p == 1.0:
                return self.sign * s
            return self.sign * s * np.abs(s) ** (self.p - 1.0)
        if self.shape == "zero":
            return np.zeros_like(s)
        return np.asarray(self.func(s), dtype=float)

    def df(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "power":
            if self.p == 1.0:
                return self.sign * np.ones_like(s)
            return self.sign * self.p * np.abs(s) ** (self.p - 1.0)
        if self.shape == "zero":
            return np.zeros_like(s)
        return np.asarray(self.deriv(s), dtype=float)

    def d2f(self, s):
        s = np.asarray(s, dtype=float)
        if self.shape == "power":
            p = self.p
            if p == 1.0:
                return np.zeros_like(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = self.sign * p * (p - 1.0) * np.sign(s) * np.abs(s) ** (p - 2.0)
            return np.where(s == 0.0, 0.0 if p >= 2.0 else np.inf, out)
        if self.shape == "zero":
            return np.zeros_like(s)
        if self.deriv2 is None:
            raise ValueError("custom source has no second derivative")
        return np.asarray(self.deriv2(s), dtype=float)

    @property
    def f0(self) -> float:
        return float(self.f(0.0))


def classify_source(p: float) -> str:
    """Criticality class of the source exponent (3-D Sobolev scale)."""
    if not 1.0 <= p < 6.0:
        raise SourceRangeError(f"source exponent p={p} outside [1, 6)")
    if p < 3.0:
        return "subcritical"
    if p == 3.0:
        return "critical"
    if p <= 5.0:
        return "supercritical"
    return "super-supercritical"


def eval_damping(damping: DampingSpec, s):
    """Return ``(g(s), g'(s))``."""
    return damping.g(s), damping.dg(s)


def eval_source(source: SourceSpec, s):
    """Return ``(f(s), f'(s), f''(s))``."""
    return source.f(s), source.df(s), source.d2f(s)


def truncate_source_K(source: SourceSpec, u, K: float):
    """Nodal values of the radially truncated source f_K(u).

    ``u`` is a :class:`~memwave.spectral.Field`. Inside the ball
    ``||grad u||_2 <= K`` this is f(u); outside, u is rescaled onto the sphere
    of radius K before f is applied pointwise.
    """
    if K <= 0:
        raise ValueError("K must be positive")
    grad = u.norm("H10")
    nodal = u.to_nodal()
    if grad > K:
        nodal = nodal * (K / grad)
    return source.f(nodal)


# quintic smoothstep S(x) = 6x^5 - 15x^4 + 10x^3 has max |S'| = 30/16
CUTOFF_SLOPE_CONST = 1.875


def cutoff_eta(n: float, s):
    """C^2 bump: 1 on |s| <= n, 0 on |s| >= 2n, quintic smoothstep between."""
    if n <= 0:
        raise ValueError("cutoff level n must be positive")
    x = np.clip((np.abs(np.asarray(s, dtype=float)) - n) / n, 0.0, 1.0)
    return 1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


def cutoff_eta_deriv(n: float, s):
    s = np.asarray(s, dtype=float)
    x = (np.abs(s) - n) / n
    inside = (x > 0) & (x < 1)
    xc = np.clip(x, 0.0, 1.0)
    dS = 30.0 * xc * xc * (1.0 - xc) ** 2
    return np.where(inside, -np.sign(s) * dS / n, 0.0)


def cutoff_source_n(source: SourceSpec, n: float, s):
    """Cut-off source f_n(s) = f(s) * eta_n(s)."""
    return source.f(s) * cutoff_eta(n, s)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        return "\n".join(f"[{'ok' if c.passed else 'FAIL'}] {c.name}: {c.detail}"
                         for c in self.checks)


_SAMPLE = np.concatenate([-np.logspace(-6, 3, 400)[::-1], [0.0], np.logspace(-6, 3, 400)])


def validate_assumptions(kernel: MemoryKernel, damping: DampingSpec,
                         source: SourceSpec) -> ValidationReport:
    """Check every standing hypothesis on (mu, g, f); failures are entries, not faults."""
    checks = []
    s = _SAMPLE

    # damping ----------------------------------------------------------
    g = damping.g(s)
    mono = bool(np.all(np.diff(g) >= 0)) and damping.shape != "zero"
    g0 = float(damping.g(0.0))
    checks.append(Check("damping.monotone", mono and g0 == 0.0,
                        f"g(0)={g0:g}, nondecreasing on samples={mono}"))
    big = np.abs(s) >= 1.0
    gs = g[big] * s[big]
    pw = np.abs(s[big]) ** (damping.m + 1.0)
    lo_ok = bool(np.all(damping.a * pw <= gs * (1 + 1e-12)))
    hi_ok = bool(np.all(gs <= damping.b * pw * (1 + 1e-12)))
    growth_ok = damping.m >= 1.0 and 0 < damping.a <= damping.b and lo_ok and hi_ok
    checks.append(Check("damping.growth", growth_ok,
                        f"m={damping.m:g}, a={damping.a:g}, b={damping.b:g}, "
                        f"lower={lo_ok}, upper={hi_ok}"))

    # source -----------------------------------------------------------
    p = source.p
    in_range = 1.0 <= p < 6.0
    fp = np.abs(source.df(s))
    need = fp / (np.abs(s) ** (p - 1.0) + 1.0)
    c_min = float(np.max(need))
    bound_ok = in_range and c_min <= source.C * (1 + 1e-12)
    checks.append(Check("source.growth", bound_ok,
                        f"p={p:g}, class={classify_source(p) if in_range else 'out-of-range'}, "
                        f"smallest sampled C={c_min:.6g}, configured C={source.C:g}"))

    # exponent balance -------------------------------------------------
    ratio = p * (damping.m + 1.0) / damping.m
    checks.append(Check("exponents.p(m+1)/m<6", ratio < 6.0,
                        f"p(m+1)/m = {ratio:.6g}"))

    # kernel -----------------------------------------------------------
    if kernel.family == "none":
        checks.append(Check("kernel.admissible", False, "no memory kernel (kappa = 0)"))
    else:
        ss = np.linspace(0.0, kernel.s_max, 2001)[1:]
        mu = kernel.mu(ss)
        dmu = kernel.dmu(ss)
        pos = bool(np.all(mu > 0))
        dec = bool(np.all(dmu <= 0))
        if kernel.family == "prony":
            pos = pos and min(kernel.amplitudes) > 0
            dec = dec and min(kernel.rates) > 0
        kap = kernel_mass(kernel)
        tail_ok = float(kernel.mu(kernel.s_max)) <= kernel.tail_tol * kernel.mu0 * (1 + 1e-9)
        ok = pos and dec and math.isfinite(kap) and kap > 0 and tail_ok
        checks.append(Check("kernel.admissible", ok,
                            f"mu>0={pos}, mu'<=0={dec}, kappa={kap:.12g}, k(0)={1 + kap:.12g}, "
                            f"s_max={kernel.s_max:.6g}, tail ok={tail_ok}"))

    checks.append(Check("initial_data.boundary", True,
                        "past history expanded in the Dirichlet basis"))
    return ValidationReport(checks)
