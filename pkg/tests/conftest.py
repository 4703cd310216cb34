import math

import numpy as np
import pytest

from rsgn import build_linear, build_logistic, build_test_problem, make_separable_logistic
from rsgn.solver import compute_rho
from rsgn.subproblem import ReducedModel, steihaug_cg


def central_fd(residual, x, v, h=None):
    """Independent central-difference oracle for J(x) v."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = np.finfo(float).eps ** (1 / 3) * max(1.0, np.max(np.abs(x)))
    return (residual(x + h * v) - residual(x - h * v)) / (2 * h)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def dense_gn_tr(problem, x0, max_iters, eta=0.1, gamma1=0.5, c=1, delta0=1.0, f_target=None, rel_tol=1e-8):
    """Reference full-space Gauss-Newton trust region.

    Assembles the dense Jacobian from Jacobian actions on unit vectors (not the
    column fast path), forms J^T J explicitly and reuses the same subproblem
    solver. Returns the list of iterates x_0, x_1, ... .
    """
    gamma2 = gamma1 ** (-c)
    x = np.array(x0, dtype=float)
    delta = delta0
    d = problem.d
    r = problem.residual(x)
    f = 0.5 * r @ r
    xs = [x.copy()]
    for _ in range(max_iters):
        if f_target is not None and f <= f_target:
            break
        J = np.column_stack([problem.jvp(x, e) for e in np.eye(d)])
        model = ReducedModel.from_matrix(J.T @ r, J.T @ J, f)
        res = steihaug_cg(model, delta, rel_tol, 2 * d)
        xt = x + res.s
        rt = problem.residual(xt)
        ft = 0.5 * rt @ rt
        rho = compute_rho(f, ft, res.predicted_decrease)
        if rho >= eta:
            x, r, f = xt, rt, ft
            delta = min(delta * gamma2, 1e6 * delta0)
        else:
            delta *= gamma1
        xs.append(x.copy())
    return xs


def acceptance_problems():
    """The five problems of the identity-sketch equivalence check, with start points."""
    rng = np.random.default_rng(11)
    A = rng.standard_normal((30, 10))
    b = rng.standard_normal(30)
    Al, yl = make_separable_logistic(120, 50, seed=3)
    out = {
        "linear": (build_linear(A, b), np.zeros(10)),
        "logistic": (build_logistic(Al, yl, 1e-10), np.zeros(50)),
    }
    for name in ("extended_rosenbrock", "broyden_tridiagonal", "chained_singular"):
        p = build_test_problem(name, 20)
        out[name] = (p, p.x0)
    return out


@pytest.fixture(scope="session")
def logistic_desk():
    """Criterion-5 problem: separable synthetic logistic regression, n=500, d=200, lambda=1e-10."""
    A, y = make_separable_logistic(500, 200, seed=0)
    return build_logistic(A, y, 1e-10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def isclose(a, b, tol):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)
