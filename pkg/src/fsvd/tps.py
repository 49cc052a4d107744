"""Tensor-product penalized cubic spline smoother of a mean surface.

The coefficient matrix ``C`` of ``f(s, t) = sum_ab C[a, b] beta_a(s) gamma_b(t)``
minimises

    sum_jk v_j u_k (mu(s_j, t_k) - f(s_j, t_k))^2
        + theta * (int int f_ss^2 + int int f_tt^2)

where ``f_ss``, ``f_tt`` are second partials. In Kronecker form the penalty
is ``vec(C)' (P_s (x) G_t + G_s (x) P_t) vec(C)`` with ``P`` the exact
roughness matrix and ``G`` the exact Gram matrix of each axis. With
``mixed_partial=True`` the thin-plate cross term ``2 int int f_st^2`` is
added as ``2 D_s (x) D_t``, ``D`` being the first-derivative Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .bspline import (
    SplineBasis,
    derivative_gram,
    exact_gram,
    gram_matrix,
    second_derivative_penalty,
)
from .core import MeanSurface
from .quadrature import Grid, trapezoid_weights

_GOLDEN = (np.sqrt(5) - 1) / 2


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when the penalized normal equations are singular."""


def grid_knot_basis(grid: Grid, order: int = 4) -> SplineBasis:
    """Cubic basis with a knot at every interior grid point."""
    return SplineBasis.on_grid(order, grid, grid.points[1:-1])


@dataclass(frozen=True, eq=False)
class TPSFit:
    s_basis: SplineBasis
    t_basis: SplineBasis
    coef: np.ndarray
    theta: float

    def __post_init__(self):
        if self.coef.shape != (self.s_basis.q, self.t_basis.q):
            raise ValueError("coefficient matrix does not match the bases")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")

    def __call__(self, s, t) -> np.ndarray:
        """Surface values on the product ``s x t``."""
        return self.s_basis(s).T @ self.coef @ self.t_basis(t)

    def surface(self, s_grid: Grid, t_grid: Grid) -> MeanSurface:
        return MeanSurface(s_grid, t_grid, self(s_grid.points, t_grid.points))


def _system(mean: MeanSurface, s_basis: SplineBasis, t_basis: SplineBasis, mixed_partial=False):
    v = trapezoid_weights(mean.s_grid)
    u = trapezoid_weights(mean.t_grid)
    Bs = s_basis(mean.s_grid.points)
    Bt = t_basis(mean.t_grid.points)
    Gs, Gt = gram_matrix(Bs, v), gram_matrix(Bt, u)
    design = np.kron(Gs, Gt)
    penalty = np.kron(second_derivative_penalty(s_basis), exact_gram(t_basis)) + np.kron(
        exact_gram(s_basis), second_derivative_penalty(t_basis)
    )
    if mixed_partial:
        penalty = penalty + 2 * np.kron(derivative_gram(s_basis, 1), derivative_gram(t_basis, 1))
    rhs = ((Bs * v) @ mean.values @ (Bt * u).T).ravel()
    return design, (penalty + penalty.T) / 2, rhs


def fit_tps(
    mean: MeanSurface,
    theta: float,
    s_basis: Optional[SplineBasis] = None,
    t_basis: Optional[SplineBasis] = None,
    mixed_partial: bool = False,
) -> TPSFit:
    """Penalized least-squares fit by one dense Cholesky solve."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    s_basis = s_basis or grid_knot_basis(mean.s_grid)
    t_basis = t_basis or grid_knot_basis(mean.t_grid)
    design, penalty, rhs = _system(mean, s_basis, t_basis, mixed_partial)
    H = design + theta * penalty
    try:
        cf = scipy.linalg.cho_factor(H)
        c = scipy.linalg.cho_solve(cf, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "penalized normal equations are singular; use theta > 0"
        ) from exc
    if np.linalg.cond(H) > 1e14:
        raise SingularSystemError(
            "penalized normal equations are numerically singular; use theta > 0"
        )
    return TPSFit(s_basis, t_basis, c.reshape(s_basis.q, t_basis.q), float(theta))


class TPSSmoother:
    """Reusable smoother for one pair of grids.

    One generalized eigendecomposition of the penalty against
    ``design + c * penalty`` turns every later solve, for any ``theta``,
    into a diagonal rescaling.
    """

    def __init__(self, s_grid: Grid, t_grid: Grid, order: int = 4, mixed_partial: bool = False):
        self.s_grid, self.t_grid = s_grid, t_grid
        self.s_basis = grid_knot_basis(s_grid, order)
        self.t_basis = grid_knot_basis(t_grid, order)
        zero = MeanSurface(s_grid, t_grid, np.zeros((len(s_grid), len(t_grid))))
        design, penalty, _ = _system(zero, self.s_basis, self.t_basis, mixed_partial)
        # theta scale where design and penalty weigh equally
        self.scale = float(np.trace(design) / np.trace(penalty))
        eta, X = scipy.linalg.eigh(penalty, design + self.scale * penalty)
        # the penalty null space (bilinear surfaces) comes out at roundoff level
        eta[np.abs(eta) <= 1e-12 * eta.max()] = 0.0
        self._eta, self._X = eta, X
        self._v = trapezoid_weights(s_grid)
        self._u = trapezoid_weights(t_grid)
        self._Bs = self.s_basis(s_grid.points)
        self._Bt = self.t_basis(t_grid.points)

    def _rhs(self, mean: MeanSurface) -> np.ndarray:
        M = mean.values if isinstance(mean, MeanSurface) else np.asarray(mean)
        return ((self._Bs * self._v) @ M @ (self._Bt * self._u).T).ravel()

    def projected(self, mean) -> np.ndarray:
        """Data in the eigen coordinates; reused across ``theta`` values."""
        return self._X.T @ self._rhs(mean)

    def coef(self, z: np.ndarray, theta: float) -> np.ndarray:
        d = 1.0 + (theta - self.scale) * self._eta
        if theta <= 0 and np.any(d <= 1e-12):
            raise SingularSystemError(
                "penalized normal equations are singular; use theta > 0"
            )
        c = self._X @ (z / d)
        return c.reshape(self.s_basis.q, self.t_basis.q)

    def fit(self, mean, theta: float) -> TPSFit:
        return TPSFit(self.s_basis, self.t_basis, self.coef(self.projected(mean), theta), float(theta))


def oracle_smoothing(
    mean: MeanSurface,
    truth: Callable,
    thetas=None,
    smoother: Optional[TPSSmoother] = None,
    n_eval: int = 101,
    golden_iters: int = 40,
):
    """Smoothing parameter minimizing the root-ISE against a known truth.

    A log-spaced grid of ``theta`` (default 40 values over ``1e-8..1e4``
    times a data-scale normalizer) is refined by golden-section search in
    ``log(theta)`` around the grid minimum.

    Returns
    -------
    theta : float
    fit : TPSFit
    """
    sm = smoother or TPSSmoother(mean.s_grid, mean.t_grid)
    if thetas is None:
        thetas = sm.scale * np.logspace(-8, 4, 40)
    thetas = np.asarray(thetas, dtype=float)
    s = np.linspace(sm.s_grid.a, sm.s_grid.b, n_eval)
    t = np.linspace(sm.t_grid.a, sm.t_grid.b, n_eval)
    ws, wt = trapezoid_weights(s), trapezoid_weights(t)
    Es, Et = sm.s_basis(s), sm.t_basis(t)
    target = truth(s[:, None], t[None, :])
    z = sm.projected(mean)

    def err(theta):
        f = Es.T @ sm.coef(z, theta) @ Et
        return float(np.sqrt(ws @ (f - target) ** 2 @ wt))

    errs = np.array([err(th) for th in thetas])
    i = int(np.argmin(errs))
    best_theta, best_err = float(thetas[i]), float(errs[i])
    if 0 < i < thetas.size - 1 and golden_iters > 0:
        lo, hi = np.log(thetas[i - 1]), np.log(thetas[i + 1])
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = err(np.exp(x1)), err(np.exp(x2))
        for _ in range(golden_iters):
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = err(np.exp(x1))
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = err(np.exp(x2))
        x, fx = (x1, f1) if f1 < f2 else (x2, f2)
        if fx < best_err:
            best_theta, best_err = float(np.exp(x)), fx
    return best_theta, sm.fit(mean, best_theta)
