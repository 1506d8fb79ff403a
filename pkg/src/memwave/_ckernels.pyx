# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pointwise damping resolvent and history transport."""

from libc.math cimport fabs, pow, fmax, fmin

cdef double EPS = 2.220446049250313e-16


from memwave._pykernels import ResolventError


cdef inline double _gpow(double v, double m) nogil:
    if m == 3.0:
        return v * v * v
    if m == 2.0:
        return v * fabs(v)
    return v * pow(fabs(v), m - 1.0)


cdef inline double _dgpow(double v, double m) nogil:
    if m == 3.0:
        return 3.0 * v * v
    if m == 2.0:
        return 2.0 * fabs(v)
    return m * pow(fabs(v), m - 1.0)


def resolve_power(r_in, double lam, double m, double tol=1e-13, int max_iter=100):
    """Solve ``v + lam*v|v|^(m-1) = r`` at every node; returns ``(v, resid)``."""
    import numpy as np
    r_arr = np.ascontiguousarray(r_in, dtype=np.float64)
    shape = r_arr.shape
    cdef double[::1] r = r_arr.ravel()
    out_arr = np.empty(r.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, n = r.shape[0]
    cdef int it
    cdef double rk, lo, hi, v, h, vn, scale, worst = 0.0, width
    cdef bint failed = False
    with nogil:
        for k in range(n):
            rk = r[k]
            if m == 1.0:
                out[k] = rk / (1.0 + lam)
                continue
            lo = fmin(rk, 0.0)
            hi = fmax(rk, 0.0)
            scale = fmax(1.0, fabs(rk))
            v = rk / (1.0 + lam)
            h = v + lam * _gpow(v, m) - rk
            it = 0
            while fabs(h) > tol * scale:
                if it >= max_iter:
                    failed = True
                    break
                if h > 0:
                    hi = v
                else:
                    lo = v
                vn = v - h / (1.0 + lam * _dgpow(v, m))
                if not (vn > lo and vn < hi):
                    vn = 0.5 * (lo + hi)
                v = vn
                h = v + lam * _gpow(v, m) - rk
                width = hi - lo
                if width <= 4.0 * EPS * fmax(fmax(fabs(lo), fabs(hi)), 1e-300):
                    break
                it += 1
            out[k] = v
            if fabs(h) / scale > worst:
                worst = fabs(h) / scale
            if failed:
                break
    if failed:
        raise ResolventError(f"damping resolvent unconverged, residual {worst:.3e}")
    return out_arr.reshape(shape), worst


def shift_add(double[:, ::1] W, double[::1] du, double[::1] c, double[::1] lam,
              double[::1] q, double[::1] S):
    """Fused in-place exact shift ``W[i] <- W[i-1] + du`` with row norms and weighted sum."""
    cdef Py_ssize_t M1 = W.shape[0], N = W.shape[1], i, j
    cdef double x, acc, ci
    with nogil:
        for j in range(N):
            S[j] = 0.0
        i = M1 - 1
        while i >= 1:
            acc = 0.0
            ci = c[i]
            for j in range(N):
                x = W[i - 1, j] + du[j]
                W[i, j] = x
                acc = acc + lam[j] * x * x
                S[j] = S[j] + ci * x
            q[i] = acc
            i -= 1
        for j in range(N):
            W[0, j] = 0.0
        q[0] = 0.0
