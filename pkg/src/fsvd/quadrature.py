"""Observation grids and trapezoid-rule quadrature weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidGridError(ValueError):
    """Raised when a sequence of points cannot be used as a grid."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing evaluation points on a closed interval.

    Parameters
    ----------
    points : array_like, shape (m,)
        Grid points. Must be finite, strictly increasing and contain at
        least two values; the interval is ``[points[0], points[-1]]``.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise InvalidGridError(f"a grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise InvalidGridError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidGridError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, m: int, a: float = 0.0, b: float = 1.0) -> "Grid":
        return cls(np.linspace(a, b, m))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.all(self.points == other.points)
        )

    def __hash__(self):
        return hash(self.points.tobytes())

    @property
    def a(self) -> float:
        return float(self.points[0])

    @property
    def b(self) -> float:
        return float(self.points[-1])

    @property
    def interval(self) -> tuple[float, float]:
        return self.a, self.b

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.a) & (x <= self.b)


def trapezoid_weights(grid: Grid | np.ndarray) -> np.ndarray:
    """Trapezoid-rule weights for integrating over ``[grid[0], grid[-1]]``.

    Interior points get half the width of the two adjacent intervals,
    endpoints get half of their single adjacent interval.

    Examples
    --------
    >>> trapezoid_weights(Grid([0.0, 0.5, 1.0]))
    array([0.25, 0.5 , 0.25])
    """
    if not isinstance(grid, Grid):
        grid = Grid(grid)
    pts = grid.points
    h = np.diff(pts)
    w = np.empty_like(pts)
    w[0] = h[0] / 2
    w[-1] = h[-1] / 2
    w[1:-1] = (h[:-1] + h[1:]) / 2
    w.setflags(write=False)
    return w


def discrete_inner_product(f, g, w) -> float:
    """Quadrature inner product ``sum_j f_j g_j w_j``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (f.shape == g.shape == w.shape) or f.ndim != 1:
        raise ValueError(
            f"length mismatch: f{f.shape}, g{g.shape}, w{w.shape}"
        )
    return float(np.sum(f * g * w))


def discrete_norm(f, w) -> float:
    return float(np.sqrt(discrete_inner_product(f, f, w)))


def surface_norm(values, v, u) -> float:
    """Product-trapezoid L2 norm of a gridded surface (rows on ``v``, cols on ``u``)."""
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.einsum("j,jk,k->", v, values**2, u)))
