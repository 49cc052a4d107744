import warnings
from functools import partial

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from fsvd.bspline import SplineBasis, SplineCurve, gram_matrix, saturated_basis
from fsvd.core import (
    ComponentPair,
    DataTensor,
    MeanSurface,
    RankError,
    align_signs,
    cross_sectional_mean,
    cross_validate_order,
    fit_fsvd,
    generalized_eigs,
    individual_predictor,
    kernel_k1,
    kernel_k2,
    omega_matrix,
    root_eigenvalue,
    scores,
    sequential_eigenfunctions,
    truncated_mean,
)
from fsvd.quadrature import Grid, surface_norm, trapezoid_weights

from conftest import rank_k_data


def _data(values, m=None, r=None):
    values = np.asarray(values, dtype=float)
    m, r = values.shape[-2:]
    return DataTensor(Grid.uniform(m), Grid.uniform(r), values)


# --- data and mean -------------------------------------------------------------

def test_mean_of_one_surface(rng):
    X = rng.standard_normal((1, 3, 4))
    assert np.array_equal(cross_sectional_mean(_data(X)).values, X[0])


def test_mean_of_opposite_surfaces(rng):
    c = rng.standard_normal((3, 4))
    assert np.all(cross_sectional_mean(_data([c, -c])).values == 0)


def test_mean_by_hand():
    X = [[[1, 2], [3, 4]], [[0, 0], [3, 1]], [[2, 1], [0, 1]]]
    M = cross_sectional_mean(_data(X)).values
    assert np.allclose(M, [[1, 1], [2, 2]])


def test_data_tensor_validation():
    g = Grid.uniform(3)
    with pytest.raises(ValueError):
        DataTensor(g, g, np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        DataTensor(g, g, np.full((1, 3, 3), np.nan))
    with pytest.raises(ValueError):
        DataTensor(g, g, np.zeros((2, 3, 3)), ("a",))
    d = DataTensor(g, g, np.zeros((2, 3, 3)))
    assert d.subjects == ("1", "2")


# --- kernels ----------------------------------------------------------------------

def test_kernels_of_zero_and_constant():
    g = Grid.uniform(6)
    w = trapezoid_weights(g)
    zero = MeanSurface(g, g, np.zeros((6, 6)))
    assert np.all(kernel_k1(zero, w) == 0) and np.all(kernel_k2(zero, w) == 0)
    one = MeanSurface(g, g, np.ones((6, 6)))
    assert np.allclose(kernel_k1(one, w), 1.0, atol=1e-15)


def test_rank_one_kernels():
    sg, tg = Grid.uniform(9), Grid.uniform(7)
    v, u = trapezoid_weights(sg), trapezoid_weights(tg)
    f, g = np.sin(3 * sg.points) + 0.2, tg.points**2 - 0.1
    mean = MeanSurface(sg, tg, np.outer(f, g))
    K1 = kernel_k1(mean, u)
    assert np.allclose(K1, (u @ g**2) * np.outer(f, f), atol=1e-14)
    assert np.linalg.matrix_rank(K1, tol=1e-10) == 1
    assert np.linalg.matrix_rank(kernel_k2(mean, v), tol=1e-10) == 1


def test_kernel_trace_identity(rng):
    sg, tg = Grid.uniform(8), Grid.uniform(5)
    v, u = trapezoid_weights(sg), trapezoid_weights(tg)
    mean = MeanSurface(sg, tg, rng.standard_normal((8, 5)))
    a = v @ np.diag(kernel_k1(mean, u))
    b = u @ np.diag(kernel_k2(mean, v))
    assert a == pytest.approx(b, rel=1e-13)
    assert a == pytest.approx(surface_norm(mean.values, v, u) ** 2, rel=1e-13)


def test_omega_special_cases(rng):
    g = Grid.uniform(7)
    v = trapezoid_weights(g)
    B = rng.random((4, 7))
    assert np.all(omega_matrix(B, v, np.zeros((7, 7))) == 0)
    K = rng.standard_normal((7, 7))
    K = K + K.T
    O = omega_matrix(np.ones((1, 7)), v, K)
    assert O[0, 0] == pytest.approx(v @ K @ v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_omega_psd(seed):
    rng = np.random.default_rng(seed)
    sg, tg = Grid.uniform(10), Grid.uniform(6)
    mean = MeanSurface(sg, tg, rng.standard_normal((10, 6)))
    B = SplineBasis(4, [0.4])(sg.points)
    O = omega_matrix(B, trapezoid_weights(sg), kernel_k1(mean, trapezoid_weights(tg)))
    assert np.linalg.eigvalsh(O).min() >= -1e-10 * max(1.0, np.abs(O).max())


# --- eigenproblems ------------------------------------------------------------------

def test_diagonal_eigenproblem():
    b, lam = sequential_eigenfunctions(np.diag([3.0, 2.0, 1.0]), np.eye(3), 2)
    assert np.allclose(lam, [3, 2])
    assert np.allclose(np.abs(b), np.eye(3)[:, :2])


def test_degenerate_omega_equals_gamma(rng):
    A = rng.standard_normal((4, 4))
    G = A @ A.T + np.eye(4)
    b, lam = sequential_eigenfunctions(G, G, 3)
    assert np.allclose(lam, 1.0)
    assert np.allclose(b.T @ G @ b, np.eye(3), atol=1e-10)


def test_against_dense_generalized_solver(rng):
    A = rng.standard_normal((6, 6))
    G = A @ A.T + 0.5 * np.eye(6)
    C = rng.standard_normal((6, 3))
    O = C @ C.T
    b, lam = sequential_eigenfunctions(O, G, 3)
    ref = scipy.linalg.eigh(O, G, eigvals_only=True)[::-1][:3]
    assert np.allclose(lam, ref, rtol=1e-9, atol=1e-12)
    assert np.allclose(b.T @ G @ b, np.eye(3), atol=1e-8)


def test_rank_error():
    with pytest.raises(RankError):
        sequential_eigenfunctions(np.eye(3), np.diag([1.0, 1.0, 0.0]), 3)


def test_constrained_eigenproblem(rng):
    A = rng.standard_normal((5, 5))
    G = A @ A.T + np.eye(5)
    O = np.diag([5.0, 4, 3, 2, 1])
    c = rng.standard_normal((5, 1))
    b, lam = generalized_eigs(O, G, 1, constraints=c)
    assert abs(c[:, 0] @ b[:, 0]) < 1e-10
    assert b[:, 0] @ G @ b[:, 0] == pytest.approx(1.0)


def test_sign_convention():
    b, _ = sequential_eigenfunctions(np.diag([1.0, 2.0]), np.eye(2), 2)
    for col in b.T:
        assert col[np.argmax(np.abs(col) > 1e-12)] > 0


# --- root eigenvalues and signs -----------------------------------------------------

def test_root_eigenvalue_of_zero_and_rank_one():
    sg, tg = Grid.uniform(41), Grid.uniform(31)
    v, u = trapezoid_weights(sg), trapezoid_weights(tg)
    assert root_eigenvalue(np.ones(41), np.ones(31), np.zeros((41, 31)), v, u) == 0
    f = np.sqrt(2) * np.sin(np.pi * sg.points)
    g = np.ones(31)
    f /= np.sqrt(v @ f**2)
    assert root_eigenvalue(f, g, np.outer(f, g), v, u) == pytest.approx(1.0, abs=1e-12)


def _constant_pair(level):
    g = Grid.uniform(5)
    one = SplineCurve(SplineBasis(1), [1.0])
    return ComponentPair(one, one), MeanSurface(g, g, np.full((5, 5), level))


@pytest.mark.parametrize("level, flipped, root", [(-2.0, True, 2.0), (2.0, False, 2.0), (0.0, False, 0.0)])
def test_align_signs(level, flipped, root):
    pair, mean = _constant_pair(level)
    out = align_signs(pair, mean)
    assert out.root_eigenvalue == pytest.approx(root)
    assert out.psi.coef[0] == (-1.0 if flipped else 1.0)
    assert out.phi.coef[0] == 1.0
    assert out.sign_form == pytest.approx(level)


# --- decomposition ---------------------------------------------------------------

def test_gamma_orthonormality(rng):
    data, sb, tb, *_ = rank_k_data([2.0, 1.0, 0.5], seed=3)
    noisy = DataTensor(data.s_grid, data.t_grid, data.values + 0.1 * rng.standard_normal(data.shape))
    d = fit_fsvd(noisy, 3, sb, tb)
    v, u = trapezoid_weights(noisy.s_grid), trapezoid_weights(noisy.t_grid)
    Phi, Psi = d.phi_values(), d.psi_values()
    assert np.allclose((Phi * v) @ Phi.T, np.eye(3), atol=1e-8)
    assert np.allclose((Psi * u) @ Psi.T, np.eye(3), atol=1e-8)
    assert np.all(np.diff(d.eigenvalues) <= 0)
    assert np.all(d.root_eigenvalues >= 0)


def test_rank_one_recovery():
    data, sb, tb, phis, psis, M = rank_k_data([1.5], seed=1)
    d = fit_fsvd(data, 1, sb, tb)
    assert np.allclose(truncated_mean(d, 1).values, M, atol=1e-10)
    assert d.root_eigenvalues[0] == pytest.approx(1.5, abs=1e-10)


def test_truncated_mean_zero_order_and_monotone_residual(rng):
    data, sb, tb, *_ = rank_k_data([2.0, 1.0, 0.3], seed=5)
    noisy = DataTensor(data.s_grid, data.t_grid, data.values + 0.2 * rng.standard_normal(data.shape))
    d = fit_fsvd(noisy, 3, sb, tb)
    assert np.all(truncated_mean(d, 0).values == 0)
    M = cross_sectional_mean(noisy).values
    v, u = trapezoid_weights(noisy.s_grid), trapezoid_weights(noisy.t_grid)
    res = [surface_norm(M - truncated_mean(d, p).values, v, u) for p in range(4)]
    assert all(a >= b - 1e-12 for a, b in zip(res, res[1:]))
    with pytest.raises(ValueError):
        truncated_mean(d, 4)


def test_scores_single_subject_and_identical_subjects():
    data, sb, tb, *_ = rank_k_data([2.0, 1.0], n=1, seed=2)
    d = fit_fsvd(data, 2, sb, tb)
    assert np.allclose(d.scores[0], d.root_eigenvalues, atol=1e-12)
    same = DataTensor(data.s_grid, data.t_grid, np.repeat(data.values, 4, axis=0))
    d4 = fit_fsvd(same, 2, sb, tb)
    assert np.allclose(d4.scores, d4.root_eigenvalues[None, :], atol=1e-12)


def test_scores_column_mean_identity(rng):
    data, sb, tb, *_ = rank_k_data([2.0, 1.0], n=6, seed=4)
    noisy = DataTensor(data.s_grid, data.t_grid, data.values + rng.standard_normal(data.shape))
    d = fit_fsvd(noisy, 2, sb, tb)
    assert np.allclose(d.scores.mean(axis=0), d.root_eigenvalues, rtol=0, atol=1e-10)


def test_constructed_outlier_score():
    data, sb, tb, phis, psis, M = rank_k_data([2.0, 1.0], n=5, seed=6)
    c = 3.0
    X = np.array(data.values)
    X[2] += c * np.outer(phis[0](data.s_grid.points), psis[0](data.t_grid.points))
    d = fit_fsvd(DataTensor(data.s_grid, data.t_grid, X), 2, sb, tb)
    w1 = d.scores[:, 0]
    others = np.delete(w1, 2)
    assert np.allclose(others, others[0], atol=1e-10)
    assert w1[2] - others[0] == pytest.approx(c, abs=1e-8)


def test_predictors_average_to_truncated_mean(rng):
    data, sb, tb, *_ = rank_k_data([2.0, 1.0], n=4, seed=7)
    noisy = DataTensor(data.s_grid, data.t_grid, data.values + 0.3 * rng.standard_normal(data.shape))
    d = fit_fsvd(noisy, 2, sb, tb)
    for p in range(3):
        avg = np.mean([individual_predictor(d, d.scores, i, p).values for i in range(4)], axis=0)
        assert np.allclose(avg, truncated_mean(d, p).values, atol=1e-12)
    assert np.all(individual_predictor(d, d.scores, 0, 0).values == 0)
    with pytest.raises(IndexError):
        individual_predictor(d, d.scores, 4, 1)


def test_predictor_recovers_rank_one_subjects():
    data, sb, tb, phis, psis, M = rank_k_data([1.0], n=4, seed=8, spread=0.5)
    d = fit_fsvd(data, 1, sb, tb)
    for i in range(4):
        pred = individual_predictor(d, d.scores, i, 1).values
        assert np.allclose(pred, data.values[i], atol=1e-10)


def test_saturated_basis_is_weighted_svd(rng):
    X = rng.standard_normal((3, 6, 5))
    data = _data(X)
    d = fit_fsvd(data, 4, saturated_basis(data.s_grid), saturated_basis(data.t_grid))
    v, u = trapezoid_weights(data.s_grid), trapezoid_weights(data.t_grid)
    sv = np.linalg.svd(np.sqrt(v)[:, None] * X.mean(axis=0) * np.sqrt(u), compute_uv=False)
    assert np.allclose(d.root_eigenvalues, sv[:4], atol=1e-10)


def test_increasing_roots_warn():
    from fsvd.core import _assemble

    data, sb, tb, phis, psis, _ = rank_k_data([2.0, 1.0], seed=9)
    with pytest.warns(UserWarning, match="nonincreasing"):
        d = _assemble(phis[::-1], psis[::-1], [1.0, 4.0], [1.0, 4.0], data)
    assert np.allclose(d.root_eigenvalues, [1.0, 2.0], atol=1e-10)


# --- cross-validation ------------------------------------------------------------------

def _rank2_population(n=10, seed=0):
    base, sb, tb, phis, psis, _ = rank_k_data([2.0, 1.0], n=1, seed=seed)
    rng = np.random.default_rng(seed)
    s, t = base.s_grid.points, base.t_grid.points
    d1 = np.outer(phis[0](s), psis[0](t))
    d2 = np.outer(phis[1](s), psis[1](t))
    a = 2 + rng.standard_normal(n)
    b = 1 + rng.standard_normal(n)
    X = a[:, None, None] * d1 + b[:, None, None] * d2
    return DataTensor(base.s_grid, base.t_grid, X), sb, tb


def test_cv_noiseless_rank_two():
    data, sb, tb = _rank2_population()
    fitter = lambda d, p: fit_fsvd(d, p, sb, tb)
    assert cross_validate_order(data, 3, folds=5, fitter=fitter) == 2
    assert cross_validate_order(data, 1, folds=5, fitter=fitter) == 1


def test_cv_deterministic():
    data, sb, tb = _rank2_population(seed=3)
    noisy = DataTensor(data.s_grid, data.t_grid, data.values + 0.05 * np.random.default_rng(1).standard_normal(data.shape))
    fitter = lambda d, p: fit_fsvd(d, p, sb, tb)
    a = cross_validate_order(noisy, 3, seed=4, fitter=fitter, return_errors=True)
    b = cross_validate_order(noisy, 3, seed=4, fitter=fitter, return_errors=True)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_cv_argument_checks():
    data, sb, tb = _rank2_population(n=3)
    with pytest.raises(ValueError):
        cross_validate_order(data, 0)
    with pytest.raises(ValueError):
        cross_validate_order(data, 2, folds=5)
