"""Spline estimation of the functional singular value decomposition.

The sample mean ``mu(s, t)`` of a bivariate process observed on a product
grid is decomposed as ``sum_k lambda_k^{1/2} phi_k(s) psi_k(t)``. Each
family of eigenfunctions is estimated separately from the kernels

    k1(s, s') = int mu(s, t) mu(s', t) dt,   k2(t, t') = int mu(s, t) mu(s, t') ds

by maximising a Rayleigh quotient over a spline space. All integrals are
trapezoid sums on the observation grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import null_space

from .bspline import (
    SplineBasis,
    SplineCurve,
    evaluate_basis,
    gram_matrix,
    symmetric_inverse_sqrt,
    NotPSDError,
)
from .quadrature import Grid, trapezoid_weights


class RankError(ValueError):
    """Raised when more components are requested than the basis supports."""


@dataclass(frozen=True, eq=False)
class DataTensor:
    """Observations ``x[i, j, k]`` of subject ``i`` at ``(s_j, t_k)``."""

    s_grid: Grid
    t_grid: Grid
    values: np.ndarray
    subjects: Optional[tuple] = None

    def __post_init__(self):
        x = np.array(self.values, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ValueError(f"values must have shape (n, m, r), got {x.shape}")
        if x.shape[0] < 1:
            raise ValueError("data tensor holds no subjects")
        if x.shape[1:] != (len(self.s_grid), len(self.t_grid)):
            raise ValueError(
                f"surface shape {x.shape[1:]} does not match grids "
                f"({len(self.s_grid)}, {len(self.t_grid)})"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("data contain missing or non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "values", x)
        subjects = self.subjects
        if subjects is None:
            subjects = tuple(str(i + 1) for i in range(x.shape[0]))
        elif len(subjects) != x.shape[0]:
            raise ValueError("number of subject labels does not match data")
        object.__setattr__(self, "subjects", tuple(subjects))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def subset(self, idx) -> "DataTensor":
        idx = np.asarray(idx)
        return DataTensor(
            self.s_grid,
            self.t_grid,
            self.values[idx],
            tuple(self.subjects[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class MeanSurface:
    """A surface tabulated on ``s_grid x t_grid``."""

    s_grid: Grid
    t_grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.s_grid), len(self.t_grid)):
            raise ValueError(
                f"values shape {v.shape} does not match grids "
                f"({len(self.s_grid)}, {len(self.t_grid)})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def cross_sectional_mean(data: DataTensor) -> MeanSurface:
    return MeanSurface(data.s_grid, data.t_grid, data.values.mean(axis=0))


def kernel_k1(mean: MeanSurface, u) -> np.ndarray:
    """``K1 = M diag(u) M^T`` (integration over t)."""
    M = mean.values if isinstance(mean, MeanSurface) else np.asarray(mean)
    u = np.asarray(u, dtype=float)
    if u.size != M.shape[1]:
        raise ValueError(f"{u.size} weights for {M.shape[1]} t points")
    K = (M * u) @ M.T
    return (K + K.T) / 2


def kernel_k2(mean: MeanSurface, v) -> np.ndarray:
    """``K2 = M^T diag(v) M`` (integration over s)."""
    M = mean.values if isinstance(mean, MeanSurface) else np.asarray(mean)
    v = np.asarray(v, dtype=float)
    if v.size != M.shape[0]:
        raise ValueError(f"{v.size} weights for {M.shape[0]} s points")
    K = (M.T * v) @ M
    return (K + K.T) / 2


def omega_matrix(B: np.ndarray, v, K: np.ndarray) -> np.ndarray:
    """Basis-projected kernel ``B V K V B^T``."""
    B = np.asarray(B, dtype=float)
    v = np.asarray(v, dtype=float)
    K = np.asarray(K, dtype=float)
    if B.shape[1] != v.size or K.shape != (v.size, v.size):
        raise ValueError(
            f"dimension mismatch: B{B.shape}, v{v.shape}, K{K.shape}"
        )
    BV = B * v
    O = BV @ K @ BV.T
    return (O + O.T) / 2


def _orient(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so the first non-negligible entry is positive."""
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        big = np.abs(col) > tol * max(np.abs(col).max(), 1e-300)
        if big.any() and col[np.argmax(big)] < 0:
            vecs[:, k] = -col
    return vecs


def _whitener(G: np.ndarray, rel_tol: float):
    evals, evecs = np.linalg.eigh((G + G.T) / 2)
    top = evals[-1] if evals.size else 0.0
    if top <= 0:
        return np.zeros((G.shape[0], 0))
    if evals[0] < -rel_tol * top:
        raise NotPSDError(f"negative eigenvalue {evals[0]:.3e} (largest {top:.3e})")
    keep = evals > rel_tol * top
    return evecs[:, keep] / np.sqrt(evals[keep])


def generalized_eigs(
    omega: np.ndarray,
    gamma: np.ndarray,
    p: int,
    constraints: Optional[np.ndarray] = None,
    rel_tol: float = 1e-10,
):
    """Top ``p`` solutions of ``max b' Omega b`` s.t. ``b' Gamma b = 1``.

    With ``constraints`` (a ``q x c`` matrix) the search is restricted to
    ``constraints' b = 0``. Returns coefficient columns and eigenvalues in
    decreasing order.
    """
    q = omega.shape[0]
    if constraints is not None and constraints.size:
        Nsp = null_space(np.asarray(constraints).T)
    else:
        Nsp = np.eye(q)
    if Nsp.shape[1] == 0:
        raise RankError("orthogonality constraints exhaust the spline space")
    O = Nsp.T @ omega @ Nsp
    G = Nsp.T @ gamma @ Nsp
    T = _whitener(G, rel_tol)
    if T.shape[1] < p:
        raise RankError(
            f"requested {p} components but the basis supports only {T.shape[1]}"
        )
    A = T.T @ O @ T
    evals, evecs = np.linalg.eigh((A + A.T) / 2)
    order = np.argsort(evals, kind="stable")[::-1][:p]
    coefs = Nsp @ (T @ evecs[:, order])
    return _orient(coefs), evals[order]


def sequential_eigenfunctions(
    omega: np.ndarray, gamma: np.ndarray, p: int, rel_tol: float = 1e-10
):
    """Gamma-orthonormal coefficient vectors maximising ``b' Omega b``.

    The k-th solution is ``Gamma^{-1/2} c_k`` where ``c_k`` is the k-th unit
    eigenvector of ``Gamma^{-1/2} Omega Gamma^{-1/2}``; eigenvalues below
    ``rel_tol`` times the largest eigenvalue of ``Gamma`` are discarded.

    Returns
    -------
    coefs : ndarray, shape (q, p)
    eigenvalues : ndarray, shape (p,)
    """
    omega = np.asarray(omega, dtype=float)
    W, rank = symmetric_inverse_sqrt(gamma, rel_tol)
    if p > rank:
        raise RankError(f"requested {p} components but Gamma has rank {rank}")
    return generalized_eigs(omega, np.asarray(gamma, dtype=float), p, rel_tol=rel_tol)


def root_eigenvalue(phi_vals, psi_vals, mean, v, u) -> float:
    """Signed bilinear form ``phi(s)' V M U psi(t)``."""
    M = mean.values if isinstance(mean, MeanSurface) else np.asarray(mean)
    phi_vals = np.asarray(phi_vals, dtype=float)
    psi_vals = np.asarray(psi_vals, dtype=float)
    if phi_vals.shape != (M.shape[0],) or psi_vals.shape != (M.shape[1],):
        raise ValueError(
            f"dimension mismatch: phi{phi_vals.shape}, psi{psi_vals.shape}, mean{M.shape}"
        )
    return float((phi_vals * v) @ M @ (psi_vals * u))


@dataclass(frozen=True)
class ComponentPair:
    """One term ``root_eigenvalue * phi(s) * psi(t)`` of the decomposition.

    ``eigenvalue`` is the maximised Rayleigh quotient of the phi problem and
    ``psi_eigenvalue`` that of the psi problem; ``root_eigenvalue`` is the
    bilinear form of the mean against ``phi`` and ``psi``.
    """

    phi: SplineCurve
    psi: SplineCurve
    root_eigenvalue: float = 0.0
    eigenvalue: float = float("nan")
    psi_eigenvalue: float = float("nan")
    sign_form: float = 0.0


def align_signs(pair: ComponentPair, mean: MeanSurface, v=None, u=None) -> ComponentPair:
    """Orient ``psi`` so the root-eigenvalue is nonnegative.

    A zero bilinear form keeps the current orientation and stores a zero
    root-eigenvalue.
    """
    if v is None:
        v = trapezoid_weights(mean.s_grid)
    if u is None:
        u = trapezoid_weights(mean.t_grid)
    form = root_eigenvalue(
        pair.phi(mean.s_grid.points), pair.psi(mean.t_grid.points), mean, v, u
    )
    psi = -pair.psi if form < 0 else pair.psi
    return ComponentPair(
        pair.phi, psi, abs(form), pair.eigenvalue, pair.psi_eigenvalue, form
    )


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Fitted components plus the per-subject score matrix."""

    components: tuple
    scores: np.ndarray
    s_grid: Grid
    t_grid: Grid
    subjects: Optional[tuple] = None

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def root_eigenvalues(self) -> np.ndarray:
        return np.array([c.root_eigenvalue for c in self.components])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([c.eigenvalue for c in self.components])

    def phi_values(self, s=None) -> np.ndarray:
        s = self.s_grid.points if s is None else _points(s)
        return np.array([c.phi(s) for c in self.components]).reshape(self.p, -1)

    def psi_values(self, t=None) -> np.ndarray:
        t = self.t_grid.points if t is None else _points(t)
        return np.array([c.psi(t) for c in self.components]).reshape(self.p, -1)


def _points(g) -> np.ndarray:
    return g.points if isinstance(g, Grid) else np.atleast_1d(np.asarray(g, dtype=float))


def _check_p(decomp: Decomposition, p: int):
    if not 0 <= p <= decomp.p:
        raise ValueError(f"p={p} outside 0..{decomp.p}")


def _surface(weights, decomp: Decomposition, p: int, eval_s, eval_t) -> MeanSurface:
    eval_s = decomp.s_grid if eval_s is None else eval_s
    eval_t = decomp.t_grid if eval_t is None else eval_t
    if not isinstance(eval_s, Grid):
        eval_s = Grid(eval_s)
    if not isinstance(eval_t, Grid):
        eval_t = Grid(eval_t)
    for g, ref, name in ((eval_s, decomp.s_grid, "s"), (eval_t, decomp.t_grid, "t")):
        if g.a < ref.a or g.b > ref.b:
            raise ValueError(f"{name} evaluation points outside [{ref.a}, {ref.b}]")
    if p == 0:
        vals = np.zeros((len(eval_s), len(eval_t)))
    else:
        Phi = decomp.phi_values(eval_s)[:p]
        Psi = decomp.psi_values(eval_t)[:p]
        vals = (Phi.T * weights[:p]) @ Psi
    return MeanSurface(eval_s, eval_t, vals)


def truncated_mean(
    decomp: Decomposition, p: int, eval_s=None, eval_t=None
) -> MeanSurface:
    """Order-``p`` reconstruction ``sum_{k<=p} lambda_k^{1/2} phi_k(s) psi_k(t)``."""
    _check_p(decomp, p)
    return _surface(decomp.root_eigenvalues, decomp, p, eval_s, eval_t)


def scores(decomp: Decomposition, data: DataTensor) -> np.ndarray:
    """Score matrix ``w[i, k] = phi_k(s)' V X_i U psi_k(t)``, shape ``(n, p)``."""
    if data.s_grid != decomp.s_grid or data.t_grid != decomp.t_grid:
        raise ValueError("data grids do not match the decomposition grids")
    v = trapezoid_weights(data.s_grid)
    u = trapezoid_weights(data.t_grid)
    Phi = decomp.phi_values() * v
    Psi = decomp.psi_values() * u
    return np.einsum("kj,ijl,kl->ik", Phi, data.values, Psi)


def individual_predictor(
    decomp: Decomposition, score_matrix, i: int, p: int, eval_s=None, eval_t=None
) -> MeanSurface:
    """Smoothed surface ``sum_{k<=p} w[i, k] phi_k(s) psi_k(t)`` for subject ``i``."""
    W = np.asarray(score_matrix, dtype=float)
    if not 0 <= i < W.shape[0]:
        raise IndexError(f"subject index {i} outside 0..{W.shape[0] - 1}")
    _check_p(decomp, p)
    return _surface(W[i], decomp, p, eval_s, eval_t)


def _assemble(
    phis: Sequence[SplineCurve],
    psis: Sequence[SplineCurve],
    phi_eigs,
    psi_eigs,
    data: DataTensor,
) -> Decomposition:
    mean = cross_sectional_mean(data)
    v = trapezoid_weights(data.s_grid)
    u = trapezoid_weights(data.t_grid)
    comps = tuple(
        align_signs(ComponentPair(f, g, 0.0, float(lf), float(lg)), mean, v, u)
        for f, g, lf, lg in zip(phis, psis, phi_eigs, psi_eigs)
    )
    roots = np.array([c.root_eigenvalue for c in comps])
    if np.any(np.diff(roots) > 1e-8 * max(roots.max(initial=0.0), 1.0)):
        warnings.warn(
            "root-eigenvalues are not nonincreasing: " + np.array2string(roots),
            stacklevel=3,
        )
    decomp = Decomposition(comps, np.zeros((data.n, len(comps))), data.s_grid, data.t_grid, data.subjects)
    W = scores(decomp, data)
    return Decomposition(comps, W, data.s_grid, data.t_grid, data.subjects)


def fit_fsvd(
    data: DataTensor,
    p: int,
    phi_basis: SplineBasis,
    psi_basis: SplineBasis,
    rel_tol: float = 1e-10,
) -> Decomposition:
    """Fit ``p`` component pairs on fixed spline bases."""
    if isinstance(data, MeanSurface):
        data = DataTensor(data.s_grid, data.t_grid, data.values[None])
    mean = cross_sectional_mean(data)
    v = trapezoid_weights(data.s_grid)
    u = trapezoid_weights(data.t_grid)
    Bs = evaluate_basis(phi_basis, data.s_grid)
    Bt = evaluate_basis(psi_basis, data.t_grid)
    bs, ls = sequential_eigenfunctions(
        omega_matrix(Bs, v, kernel_k1(mean, u)), gram_matrix(Bs, v), p, rel_tol
    )
    bt, lt = sequential_eigenfunctions(
        omega_matrix(Bt, u, kernel_k2(mean, v)), gram_matrix(Bt, u), p, rel_tol
    )
    phis = [SplineCurve(phi_basis, bs[:, k]) for k in range(p)]
    psis = [SplineCurve(psi_basis, bt[:, k]) for k in range(p)]
    return _assemble(phis, psis, ls, lt, data)


def cross_validate_order(
    data: DataTensor,
    max_p: int,
    folds: int = 5,
    seed: int = 0,
    fitter: Optional[Callable[[DataTensor, int], Decomposition]] = None,
    tie_tol: float = 1e-10,
    return_errors: bool = False,
):
    """Choose the order ``p`` by K-fold cross-validation over subjects.

    Each fold is fitted on the remaining subjects; the held-out surfaces are
    scored with the trained components and the squared quadrature error of
    the individual predictors is accumulated for every ``p <= max_p``.
    Totals within ``tie_tol * sum ||X_i||^2`` of the minimum count as ties,
    which go to the smaller ``p``.
    """
    if max_p < 1:
        raise ValueError("max_p must be at least 1")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if data.n < folds:
        raise ValueError(f"{data.n} subjects cannot fill {folds} folds")
    if fitter is None:
        from .freeknot import fit_fsvd_freeknot

        fitter = fit_fsvd_freeknot
    v = trapezoid_weights(data.s_grid)
    u = trapezoid_weights(data.t_grid)
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(data.n), folds)
    totals = np.zeros(max_p + 1)
    for held in parts:
        train = np.setdiff1d(np.arange(data.n), held)
        with warnings.catch_warnings():
            # high-order fold fits often reorder weak components
            warnings.simplefilter("ignore", UserWarning)
            decomp = fitter(data.subset(train), max_p)
        test = data.subset(np.sort(held))
        W = scores(decomp, test)
        Phi = decomp.phi_values()
        Psi = decomp.psi_values()
        resid = test.values.copy()
        totals[0] += np.einsum("j,ijk,k->", v, resid**2, u)
        for k in range(max_p):
            resid -= W[:, k, None, None] * np.outer(Phi[k], Psi[k])[None]
            totals[k + 1] += np.einsum("j,ijk,k->", v, resid**2, u)
    scale = np.einsum("j,ijk,k->", v, data.values**2, u)
    cand = totals[1:]
    best = int(np.nonzero(cand <= cand.min() + tie_tol * scale)[0][0]) + 1
    if return_errors:
        return best, cand
    return best
