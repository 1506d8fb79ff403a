"""Pure-numpy versions of the hot kernels (same contracts as ``_ckernels``)."""

import numpy as np

EPS = np.finfo(float).eps


class ResolventError(RuntimeError):
    """The damping resolvent failed to converge (bug trap: g is monotone)."""


def resolve_damping(r, lam, g, dg, tol=1e-13, max_iter=100):
    """Solve ``v + lam*g(v) = r`` elementwise by safeguarded Newton.

    Each root is bracketed by ``[min(0, r), max(0, r)]``; Newton steps that
    leave the bracket are replaced by bisection. Returns ``(v, resid)`` where
    ``resid`` is the largest residual scaled by ``max(1, |r|)``.
    """
    r = np.asarray(r, dtype=float)
    shape = r.shape
    r = r.ravel()
    lo = np.minimum(r, 0.0)
    hi = np.maximum(r, 0.0)
    v = r / (1.0 + lam)
    scale = np.maximum(1.0, np.abs(r))
    h = v + lam * g(v) - r
    active = np.abs(h) > tol * scale
    it = 0
    while active.any():
        if it >= max_iter:
            worst = float(np.max(np.abs(h[active]) / scale[active]))
            raise ResolventError(f"damping resolvent: {active.sum()} nodes unconverged, "
                                 f"residual {worst:.3e}")
        idx = np.nonzero(active)[0]
        va, ha = v[idx], h[idx]
        pos = ha > 0
        hi[idx] = np.where(pos, va, hi[idx])
        lo[idx] = np.where(pos, lo[idx], va)
        vn = va - ha / (1.0 + lam * dg(va))
        bad = ~((vn > lo[idx]) & (vn < hi[idx]))
        vn = np.where(bad, 0.5 * (lo[idx] + hi[idx]), vn)
        v[idx] = vn
        h[idx] = vn + lam * g(vn) - r[idx]
        width = hi[idx] - lo[idx]
        collapsed = width <= 4.0 * EPS * np.maximum(np.maximum(np.abs(lo[idx]), np.abs(hi[idx])), 1e-300)
        active[idx] = (np.abs(h[idx]) > tol * scale[idx]) & ~collapsed
        it += 1
    resid = float(np.max(np.abs(h) / scale)) if h.size else 0.0
    return v.reshape(shape), resid


def resolve_power(r, lam, m, tol=1e-13, max_iter=100):
    """Resolvent for ``g(v) = v|v|^(m-1)``."""
    if m == 1.0:
        v = np.asarray(r, dtype=float) / (1.0 + lam)
        return v, 0.0
    return resolve_damping(r, lam,
                           lambda x: x * np.abs(x) ** (m - 1.0),
                           lambda x: m * np.abs(x) ** (m - 1.0),
                           tol, max_iter)


def shift_add(W, du, c, lam, q, S):
    """Exact-shift transport of the history rows, in place.

    ``W[i] <- W[i-1] + du`` for i >= 1 and ``W[0] <- 0``. Also fills
    ``q[i] = sum_j lam_j W[i, j]^2`` and ``S = sum_i c_i W[i]`` for the new rows.
    """
    if W.shape[0] > 1:
        W[1:] = W[:-1]
        W[1:] += du
    W[0] = 0.0
    np.einsum("ij,ij,j->i", W, W, lam, out=q)
    np.dot(c, W, out=S)
