"""Dirichlet-Laplacian sine bases on intervals and rectangles.

A :class:`SpectralBasis` carries the exact eigenpairs and a uniform interior
quadrature grid (the DST-I grid), on which nonlinear terms are evaluated and
projected back. Coefficients are stored in ascending-eigenvalue order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft

__all__ = ["SpectralBasis", "Field", "build_basis", "regularize", "norm",
           "to_coeffs", "to_nodal"]


def _dst(x, axes):
    return sfft.dstn(x, type=1, axes=axes, norm="ortho")


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Sine eigenbasis of -Laplace with homogeneous Dirichlet conditions.

    Parameters
    ----------
    lengths : tuple of float
        ``(L,)`` for the interval (0, L), ``(L1, L2)`` for a rectangle.
    n_modes : int
        Modes per axis; the basis has ``n_modes ** dim`` functions.
    n_quad : int
        Interior quadrature points per axis (at least ``n_modes``).
    """

    lengths: tuple
    n_modes: int
    n_quad: int

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one mode")
        if any(L <= 0 for L in self.lengths) or len(self.lengths) not in (1, 2):
            raise ValueError("domain extents must be positive (interval or rectangle)")
        if self.n_quad < self.n_modes:
            raise ValueError("quadrature grid coarser than the basis")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def size(self) -> int:
        return self.n_modes ** self.dim

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def _modes(self):
        N = self.n_modes
        j = np.arange(1, N + 1)
        if self.dim == 1:
            lam = (j * math.pi / self.lengths[0]) ** 2
            return lam, (j - 1,)
        L1, L2 = self.lengths
        j1, j2 = np.meshgrid(j, j, indexing="ij")
        lam = (j1 * math.pi / L1) ** 2 + (j2 * math.pi / L2) ** 2
        order = np.lexsort((j2.ravel(), j1.ravel(), lam.ravel()))
        return lam.ravel()[order], (j1.ravel()[order] - 1, j2.ravel()[order] - 1)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._modes[0]

    @property
    def mode_indices(self):
        """Zero-based per-axis mode numbers for each coefficient slot."""
        return self._modes[1]

    def nodes(self, n_quad=None):
        Q = self.n_quad if n_quad is None else n_quad
        axes = [L * np.arange(1, Q + 1) / (Q + 1) for L in self.lengths]
        return axes[0] if self.dim == 1 else np.meshgrid(*axes, indexing="ij")

    def cell_weight(self, n_quad=None) -> float:
        Q = self.n_quad if n_quad is None else n_quad
        return float(np.prod([L / (Q + 1) for L in self.lengths]))

    # transforms ---------------------------------------------------------
    def to_nodal(self, coeffs, n_quad=None):
        """Evaluate coefficient vectors (last axis) on the quadrature grid."""
        Q = self.n_quad if n_quad is None else n_quad
        c = np.asarray(coeffs, dtype=float)
        if c.shape[-1] != self.size:
            raise ValueError(f"coefficient length {c.shape[-1]} != basis size {self.size}")
        lead = c.shape[:-1]
        if self.dim == 1:
            pad = np.zeros(lead + (Q,))
            pad[..., : self.n_modes] = c
            return _dst(pad, (-1,)) * math.sqrt((Q + 1) / self.lengths[0])
        pad = np.zeros(lead + (Q, Q))
        i1, i2 = self.mode_indices
        pad[..., i1, i2] = c
        scale = math.sqrt((Q + 1) ** 2 / self.volume)
        return _dst(pad, (-2, -1)) * scale

    def to_coeffs(self, nodal, n_quad=None):
        """Discrete L2 projection of grid values onto the basis."""
        Q = self.n_quad if n_quad is None else n_quad
        x = np.asarray(nodal, dtype=float)
        if self.dim == 1:
            if x.shape[-1] != Q:
                raise ValueError(f"nodal grid has {x.shape[-1]} points, expected {Q}")
            full = _dst(x, (-1,)) * math.sqrt(self.lengths[0] / (Q + 1))
            return full[..., : self.n_modes]
        if x.shape[-2:] != (Q, Q):
            raise ValueError(f"nodal grid has shape {x.shape[-2:]}, expected {(Q, Q)}")
        full = _dst(x, (-2, -1)) * math.sqrt(self.volume / (Q + 1) ** 2)
        i1, i2 = self.mode_indices
        return full[..., i1, i2]

    def integrate(self, nodal, n_quad=None):
        """Quadrature of grid values over the domain (sums the spatial axes)."""
        x = np.asarray(nodal, dtype=float)
        axes = (-1,) if self.dim == 1 else (-2, -1)
        return x.sum(axis=axes) * self.cell_weight(n_quad)

    def quad_for_power(self, q: float) -> int:
        """Grid size resolving |u|^q for band-limited u (exact for even q)."""
        return max(self.n_quad, int(math.ceil(q / 2.0 + 1.0)) * self.n_modes)

    def field(self, coeffs=None) -> "Field":
        c = np.zeros(self.size) if coeffs is None else np.array(coeffs, dtype=float)
        return Field(self, c)

    def mode(self, j: int) -> "Field":
        """The j-th (1-based, ascending eigenvalue) orthonormal eigenfunction."""
        c = np.zeros(self.size)
        c[j - 1] = 1.0
        return Field(self, c)


def build_basis(domain, N: int, degree: float = 3.0) -> SpectralBasis:
    """Basis with ``ceil((degree+1)/2) * N`` quadrature points per axis.

    ``domain`` is a length, a 1-tuple or a 2-tuple of lengths; ``degree`` is
    the largest power in the nonlinear terms (usually ``max(p, m)``).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    lengths = (float(domain),) if np.isscalar(domain) else tuple(float(L) for L in domain)
    Q = max(N, int(math.ceil((degree + 1.0) / 2.0)) * N)
    return SpectralBasis(lengths, int(N), Q)


@dataclass(eq=False)
class Field:
    """A function on the domain stored by its coefficients ``(u, e_j)``."""

    basis: SpectralBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.size,):
            raise ValueError("coefficient vector does not match the basis")

    def to_nodal(self, n_quad=None):
        return self.basis.to_nodal(self.coeffs, n_quad)

    def norm(self, which="L2", q=None):
        return norm(self, which, q)

    def __add__(self, other):
        return Field(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return Field(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, a):
        return Field(self.basis, self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.basis, -self.coeffs)


def to_coeffs(basis: SpectralBasis, nodal) -> Field:
    return Field(basis, basis.to_coeffs(nodal))


def to_nodal(u: Field):
    return u.to_nodal()


def lq_norm(basis: SpectralBasis, coeffs, q: float):
    """L^q norm(s) of coefficient vectors by grid quadrature."""
    Q = basis.quad_for_power(q)
    vals = np.abs(basis.to_nodal(coeffs, Q)) ** q
    return basis.integrate(vals, Q) ** (1.0 / q)


def norm(u: Field, which="L2", q=None) -> float:
    """L2, H10 (= ||grad u||_2), Hneg1 (spectral) or Lp(q) norm of a field."""
    c = u.coeffs
    lam = u.basis.eigenvalues
    if which == "L2":
        return float(math.sqrt(np.dot(c, c)))
    if which == "H10":
        return float(math.sqrt(np.dot(lam * c, c)))
    if which == "Hneg1":
        return float(math.sqrt(np.dot(c / lam, c)))
    if which == "Lp":
        if q is None or not 1.0 <= q < math.inf:
            raise ValueError(f"unsupported Lebesgue exponent {q!r}")
        return float(lq_norm(u.basis, c, q))
    raise ValueError(f"unknown norm {which!r}")


def regularize(u: Field, eps: float) -> Field:
    """Apply (I - eps*Laplace)^{-1}: mode j is divided by 1 + eps*lambda_j."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return Field(u.basis, u.coeffs / (1.0 + eps * u.basis.eigenvalues))
