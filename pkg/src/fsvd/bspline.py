"""Clamped B-spline bases on one axis.

Bases are evaluated with the Cox-de Boor recursion over the full knot
vector. Interior knots may repeat up to the spline order; a knot of
multiplicity ``order`` produces a jump, and evaluation is right-continuous
except at the right boundary, which is closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .quadrature import Grid


class NotPSDError(ValueError):
    """Raised when a matrix expected to be positive semidefinite is not."""


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """B-spline basis of a given order on ``[a, b]``.

    Parameters
    ----------
    order : int
        Spline order (polynomial degree + 1); 4 is cubic.
    interior_knots : array_like
        Knots strictly inside ``(a, b)``; sorted on construction. A value may
        appear at most ``order`` times.
    a, b : float
        Interval end points. Boundary knots get full multiplicity.
    """

    order: int
    interior_knots: np.ndarray = field(default_factory=lambda: np.empty(0))
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order}")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")
        knots = np.sort(np.asarray(self.interior_knots, dtype=float).ravel())
        if knots.size and (knots[0] <= self.a or knots[-1] >= self.b):
            raise ValueError("interior knots must lie strictly inside (a, b)")
        if knots.size:
            _, counts = np.unique(knots, return_counts=True)
            if counts.max() > self.order:
                raise ValueError(
                    f"knot multiplicity {counts.max()} exceeds order {self.order}"
                )
        knots.setflags(write=False)
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @classmethod
    def on_grid(cls, order: int, grid: Grid, interior_knots=()) -> "SplineBasis":
        return cls(order, np.asarray(interior_knots, dtype=float), grid.a, grid.b)

    @property
    def q(self) -> int:
        """Dimension of the spline space."""
        return self.order + self.interior_knots.size

    @cached_property
    def knots(self) -> np.ndarray:
        k = self.order
        t = np.concatenate([np.full(k, self.a), self.interior_knots, np.full(k, self.b)])
        t.setflags(write=False)
        return t

    def with_knot(self, knot: float) -> "SplineBasis":
        return SplineBasis(
            self.order, np.append(self.interior_knots, knot), self.a, self.b
        )

    def __eq__(self, other):
        if not isinstance(other, SplineBasis):
            return NotImplemented
        return (
            self.order == other.order
            and self.a == other.a
            and self.b == other.b
            and np.array_equal(self.interior_knots, other.interior_knots)
        )

    def __hash__(self):
        return hash((self.order, self.a, self.b, self.interior_knots.tobytes()))

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        """Basis values (or derivatives) at ``x``, shape ``(q, len(x))``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < self.a) | (x > self.b)) or not np.all(np.isfinite(x)):
            bad = x[~((x >= self.a) & (x <= self.b))]
            raise ValueError(
                f"evaluation points outside [{self.a}, {self.b}]: {bad[:5]}"
            )
        return _derivative(self.knots, self.order, x, deriv)


def _cox_de_boor(t: np.ndarray, order: int, x: np.ndarray) -> np.ndarray:
    nt = t.size
    xx = x[None, :]
    N = ((t[:-1, None] <= xx) & (xx < t[1:, None])).astype(float)
    # closed right boundary: attach x == t[-1] to the last nonempty span
    at_end = x == t[-1]
    if np.any(at_end):
        last = np.nonzero(t[:-1] < t[1:])[0][-1]
        N[:, at_end] = 0.0
        N[last, at_end] = 1.0
    for k in range(2, order + 1):
        ti = t[: nt - k, None]
        ti1 = t[1 : nt - k + 1, None]
        tik1 = t[k - 1 : nt - 1, None]
        tik = t[k:, None]
        dl = tik1 - ti
        dr = tik - ti1
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(dl > 0, (xx - ti) / dl, 0.0)
            right = np.where(dr > 0, (tik - xx) / dr, 0.0)
        N = left * N[:-1] + right * N[1:]
    return N


def _derivative(t: np.ndarray, order: int, x: np.ndarray, deriv: int) -> np.ndarray:
    if deriv == 0:
        return _cox_de_boor(t, order, x)
    if deriv >= order:
        return np.zeros((t.size - order, x.size))
    D = _derivative(t, order - 1, x, deriv - 1)
    nt = t.size
    k = order
    dl = t[k - 1 : nt - 1] - t[: nt - k]
    dr = t[k:] - t[1 : nt - k + 1]
    with np.errstate(divide="ignore"):
        cl = np.where(dl > 0, (k - 1) / dl, 0.0)[:, None]
        cr = np.where(dr > 0, (k - 1) / dr, 0.0)[:, None]
    return cl * D[:-1] - cr * D[1:]


def evaluate_basis(basis: SplineBasis, grid: Grid | np.ndarray) -> np.ndarray:
    """Basis matrix ``B[i, j] = beta_i(s_j)`` of shape ``(q, m)``."""
    pts = grid.points if isinstance(grid, Grid) else grid
    return basis(pts)


def gram_matrix(B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Quadrature Gram matrix ``B diag(w) B^T``."""
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    if B.ndim != 2 or B.shape[1] != w.size:
        raise ValueError(f"dimension mismatch: B{B.shape}, w{w.shape}")
    G = (B * w) @ B.T
    return (G + G.T) / 2


def symmetric_inverse_sqrt(G: np.ndarray, rel_tol: float = 1e-10):
    """Pseudo-inverse symmetric square root of a PSD matrix.

    Eigenvalues below ``rel_tol * max_eigenvalue`` are treated as zero and
    their eigenspace is dropped.

    Returns
    -------
    W : ndarray
        ``G^{-1/2}`` on the retained eigenspace (zero on its complement).
    rank : int
        Number of retained eigenvalues.

    Raises
    ------
    NotPSDError
        If ``G`` has an eigenvalue below ``-rel_tol * max_eigenvalue``.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    if not np.allclose(G, G.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(G).max())):
        raise ValueError("matrix is not symmetric")
    evals, evecs = np.linalg.eigh((G + G.T) / 2)
    top = evals[-1] if evals.size else 0.0
    if top <= 0:
        if evals.size and evals[0] < -1e-300:
            raise NotPSDError("matrix has no positive eigenvalues")
        return np.zeros_like(G), 0
    cut = rel_tol * top
    if evals[0] < -cut:
        raise NotPSDError(
            f"negative eigenvalue {evals[0]:.3e} (largest {top:.3e})"
        )
    keep = evals > cut
    Q = evecs[:, keep]
    W = (Q / np.sqrt(evals[keep])) @ Q.T
    return (W + W.T) / 2, int(keep.sum())


def _gauss_points(basis: SplineBasis, npts: int):
    """Gauss-Legendre nodes/weights on every nonempty knot span."""
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    brk = np.unique(basis.knots)
    lo, hi = brk[:-1], brk[1:]
    half = (hi - lo)[:, None] / 2
    x = (lo[:, None] + half * (nodes[None, :] + 1)).ravel()
    w = (half * weights[None, :]).ravel()
    return x, w


def derivative_gram(basis: SplineBasis, deriv: int = 0) -> np.ndarray:
    """Exact ``int beta_i^(d) beta_j^(d)`` by piecewise Gauss-Legendre quadrature."""
    x, w = _gauss_points(basis, basis.order)
    D = basis(x, deriv=deriv)
    G = (D * w) @ D.T
    return (G + G.T) / 2


def second_derivative_penalty(basis: SplineBasis) -> np.ndarray:
    """Exact roughness matrix ``P[i, j] = int beta_i'' beta_j''``."""
    if basis.order < 3:
        raise ValueError("second-derivative penalty needs order >= 3")
    return derivative_gram(basis, 2)


def exact_gram(basis: SplineBasis) -> np.ndarray:
    return derivative_gram(basis, 0)


def saturated_basis(grid: Grid) -> SplineBasis:
    """Piecewise-constant basis with one function per grid point.

    Knots sit at the midpoints between consecutive grid points, so the
    basis matrix on ``grid`` is the identity.
    """
    pts = grid.points
    return SplineBasis(1, (pts[:-1] + pts[1:]) / 2, grid.a, grid.b)


@dataclass(frozen=True, eq=False)
class SplineCurve:
    """A univariate spline ``sum_i coef[i] * beta_i``."""

    basis: SplineBasis
    coef: np.ndarray

    def __post_init__(self):
        c = np.array(self.coef, dtype=float).ravel()
        if c.size != self.basis.q:
            raise ValueError(f"expected {self.basis.q} coefficients, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "coef", c)

    def __call__(self, x) -> np.ndarray:
        return self.coef @ self.basis(x)

    def __neg__(self) -> "SplineCurve":
        return SplineCurve(self.basis, -self.coef)
