import numpy as np
import pytest

from fsvd.bspline import SplineBasis, SplineCurve
from fsvd.core import DataTensor
from fsvd.quadrature import Grid, trapezoid_weights


def orthonormal_curves(basis, grid, k, rng):
    """``k`` splines in ``basis`` that are orthonormal in the trapezoid product of ``grid``."""
    B = basis(grid.points)
    w = trapezoid_weights(grid)
    C = rng.standard_normal((basis.q, k))
    # Gram-Schmidt in the discrete inner product
    for j in range(k):
        for i in range(j):
            C[:, j] -= ((C[:, i] @ B) * w) @ (C[:, j] @ B) * C[:, i]
        C[:, j] /= np.sqrt(((C[:, j] @ B) ** 2) @ w)
    return [SplineCurve(basis, C[:, j]) for j in range(k)]


def rank_k_data(roots, m=25, r=21, n=3, seed=0, spread=0.0):
    """Noiseless data whose mean is ``sum roots[k] phi_k psi_k`` with cubic-spline factors.

    Subjects are scaled copies of the mean (scale factors averaging one), so
    the sample mean is exactly the planted surface.
    """
    rng = np.random.default_rng(seed)
    sg, tg = Grid.uniform(m), Grid.uniform(r)
    sb = SplineBasis(4, [0.3, 0.6])
    tb = SplineBasis(4, [0.5])
    phis = orthonormal_curves(sb, sg, len(roots), rng)
    psis = orthonormal_curves(tb, tg, len(roots), rng)
    M = sum(l * np.outer(f(sg.points), g(tg.points)) for l, f, g in zip(roots, phis, psis))
    scale = 1 + spread * np.linspace(-1, 1, n)
    X = scale[:, None, None] * M[None]
    return DataTensor(sg, tg, X), sb, tb, phis, psis, M


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def record(label, ok, detail):
    line = f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
