"""Nonlinear least-squares problems ``min f(x) = 0.5 * ||r(x)||^2``.

A problem only has to supply residuals and Jacobian-vector products; the
solvers never build the full Jacobian. Optional hooks (column extraction,
Jacobian-times-matrix, analytic gradient) speed up the common sketch types.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .sketch import DimensionError, SketchOperator

__all__ = [
    "EvaluationError",
    "NlsProblem",
    "SketchedJacobian",
    "eval_objective",
    "eval_sketched_jacobian",
    "eval_full_gradient",
    "dense_jacobian",
    "build_linear",
    "build_logistic",
    "build_test_problem",
    "make_separable_logistic",
    "TEST_PROBLEMS",
]

FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


class EvaluationError(ArithmeticError):
    """A residual came out non-finite."""

    def __init__(self, index, value):
        self.index = int(index)
        self.value = value
        super().__init__(f"non-finite residual r[{self.index}] = {value}")


class ProblemError(ValueError):
    pass


def _check_finite(r):
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise EvaluationError(bad[0], r[bad[0]])
    return r


@dataclass(frozen=True, eq=False)
class NlsProblem:
    """Residual map ``r: R^d -> R^n`` with matrix-free Jacobian actions.

    ``jvp(x, v)`` returns ``J(x) v``. When omitted, central finite differences
    of ``residual`` are used. ``columns(x, idx)`` returns ``J(x)[:, idx]``;
    ``jac_mat(x, M)`` returns ``J(x) M`` for a ``d x k`` matrix; ``gradient(x)``
    returns ``J(x)^T r(x)``.
    """

    d: int
    n: int
    residual_fn: Callable[[np.ndarray], np.ndarray]
    jvp_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    columns_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    jac_mat_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    gradient_fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "problem"
    x0: np.ndarray | None = None
    f_star: float | None = None

    def _x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError(f"{self.name}: expected x of length {self.d}, got shape {x.shape}")
        return x

    def residual(self, x):
        return _check_finite(np.asarray(self.residual_fn(self._x(x)), dtype=float))

    def objective(self, x):
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def jvp(self, x, v):
        x = self._x(x)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise DimensionError(f"{self.name}: direction must have length {self.d}")
        if self.jvp_fn is not None:
            return np.asarray(self.jvp_fn(x, v), dtype=float)
        return fd_jvp(self.residual, x, v)

    def jac_mat(self, x, M):
        """``J(x) @ M`` for ``M`` of shape ``(d, k)``."""
        x = self._x(x)
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != self.d:
            raise DimensionError(f"{self.name}: expected a ({self.d}, k) matrix, got {M.shape}")
        if self.jac_mat_fn is not None:
            return np.asarray(self.jac_mat_fn(x, M), dtype=float)
        out = np.empty((self.n, M.shape[1]))
        for i in range(M.shape[1]):
            out[:, i] = self.jvp(x, M[:, i])
        return out

    def columns(self, x, idx):
        """``J(x)[:, idx]``; repeated indices give repeated columns."""
        x = self._x(x)
        idx = np.asarray(idx, dtype=np.intp)
        if self.columns_fn is not None:
            return np.asarray(self.columns_fn(x, idx), dtype=float)
        out = np.empty((self.n, idx.size))
        e = np.zeros(self.d)
        for i, j in enumerate(idx):
            e[j] = 1.0
            out[:, i] = self.jvp(x, e)
            e[j] = 0.0
        return out

    @property
    def has_fast_columns(self):
        return self.columns_fn is not None


def fd_jvp(residual, x, v, h=None):
    """Central-difference approximation of ``J(x) v``."""
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros_like(residual(x))
    if h is None:
        h = FD_STEP * (1.0 + np.max(np.abs(x)))
    u = v / nv
    return (residual(x + h * u) - residual(x - h * u)) * (nv / (2.0 * h))


@dataclass(frozen=True, eq=False)
class SketchedJacobian:
    matrix: np.ndarray
    x: np.ndarray
    sketch: SketchOperator

    @property
    def shape(self):
        return self.matrix.shape


def eval_objective(p: NlsProblem, x) -> float:
    """``0.5 * ||r(x)||^2``; raises :class:`EvaluationError` on non-finite residuals."""
    return p.objective(x)


def eval_sketched_jacobian(p: NlsProblem, x, S: SketchOperator) -> SketchedJacobian:
    """Return ``J(x) S^T`` (``n x l``).

    Sampling and identity sketches take the column-extraction path, scaled by
    the sketch's common entry value. Other sketches use one Jacobian action per
    row of ``S``.
    """
    if S.d != p.d:
        raise DimensionError(f"sketch has {S.d} columns but problem has d={p.d}")
    x = np.asarray(x, dtype=float)
    support = S.column_support()
    if support is not None:
        mat = p.columns(x, support)
        scale = S.scale
        if scale != 1.0:
            mat = mat * scale
    else:
        mat = p.jac_mat(x, S.transpose_matrix())
    return SketchedJacobian(mat, x.copy(), S)


def eval_full_gradient(p: NlsProblem, x) -> np.ndarray:
    """``J(x)^T r(x)``. Falls back to ``d`` Jacobian actions when no analytic form exists."""
    x = np.asarray(x, dtype=float)
    if p.gradient_fn is not None:
        return np.asarray(p.gradient_fn(p._x(x)), dtype=float)
    warnings.warn(
        f"{p.name}: no analytic gradient, assembling J^T r from {p.d} Jacobian actions",
        RuntimeWarning,
        stacklevel=2,
    )
    r = p.residual(x)
    return dense_jacobian(p, x).T @ r


def dense_jacobian(p: NlsProblem, x) -> np.ndarray:
    """Assemble ``J(x)`` column by column from Jacobian actions (diagnostics/tests)."""
    return p.jac_mat(x, np.eye(p.d))


# ---------------------------------------------------------------------------
# builders


def build_linear(A, b) -> NlsProblem:
    """``r(x) = A x - b`` with constant Jacobian ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n, d = A.shape
    if b.shape != (n,):
        raise DimensionError(f"A is {n}x{d} but b has length {b.size}")
    return NlsProblem(
        d=d,
        n=n,
        residual_fn=lambda x: A @ x - b,
        jvp_fn=lambda x, v: A @ v,
        columns_fn=lambda x, idx: A[:, idx],
        jac_mat_fn=lambda x, M: A @ M,
        gradient_fn=lambda x: A.T @ (A @ x - b),
        name="linear",
        x0=np.zeros(d),
    )


def softplus(t):
    """``log(1 + exp(t))`` without overflow."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, t + np.log1p(np.exp(-np.abs(t))), np.log1p(np.exp(np.minimum(t, 0.0))))


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def build_logistic(data, labels, lam=0.0, intercept=False) -> NlsProblem:
    """Logistic regression as least squares.

    Residuals are ``r_i(x) = log(1 + exp(-y_i a_i^T x))`` for each observation,
    followed (when ``lam > 0``) by ``d`` residuals ``sqrt(2 lam) x_j`` so the
    objective gains exactly ``lam * ||x||^2``.

    ``data`` may be a dense array or a scipy sparse matrix. With
    ``intercept=True`` a constant column of ones is appended to the data.
    """
    y = np.asarray(labels, dtype=float).ravel()
    if sparse.issparse(data):
        A = sparse.csr_matrix(data, dtype=float)
        if intercept:
            A = sparse.hstack([A, np.ones((A.shape[0], 1))], format="csr")
        A_csc = A.tocsc()
    else:
        A = np.atleast_2d(np.asarray(data, dtype=float))
        if intercept:
            A = np.hstack([A, np.ones((A.shape[0], 1))])
        A_csc = A
    m, d = A.shape
    if y.shape != (m,):
        raise DimensionError(f"{m} observations but {y.size} labels")
    if not np.all((y == 1.0) | (y == -1.0)):
        bad = np.flatnonzero((y != 1.0) & (y != -1.0))[0]
        raise ProblemError(f"label {labels[bad]!r} at row {bad} is not in {{-1, +1}}")
    lam = float(lam)
    if lam < 0:
        raise ProblemError(f"lambda must be nonnegative, got {lam}")
    reg = np.sqrt(2.0 * lam)
    n = m + d if lam > 0 else m

    def margins(x):
        return y * np.asarray(A @ x).ravel()

    def weights(x):
        # dr_i/dz_i * y_i with z_i = y_i a_i^T x
        return -y * sigmoid(-margins(x))

    def residual(x):
        r = softplus(-margins(x))
        return np.concatenate([r, reg * x]) if lam > 0 else r

    def jvp(x, v):
        jv = weights(x) * np.asarray(A @ v).ravel()
        return np.concatenate([jv, reg * v]) if lam > 0 else jv

    def jac_mat(x, M):
        top = weights(x)[:, None] * np.asarray(A @ M)
        return np.vstack([top, reg * M]) if lam > 0 else top

    def columns(x, idx):
        sub = A_csc[:, idx]
        sub = sub.toarray() if sparse.issparse(sub) else sub
        top = weights(x)[:, None] * sub
        if lam == 0:
            return top
        bottom = np.zeros((d, idx.size))
        bottom[idx, np.arange(idx.size)] = reg
        return np.vstack([top, bottom])

    def gradient(x):
        z = margins(x)
        g = np.asarray(A.T @ (-y * sigmoid(-z) * softplus(-z))).ravel()
        return g + 2.0 * lam * x

    return NlsProblem(
        d=d,
        n=n,
        residual_fn=residual,
        jvp_fn=jvp,
        columns_fn=columns,
        jac_mat_fn=jac_mat,
        gradient_fn=gradient,
        name="logistic",
        x0=np.zeros(d),
    )


def make_separable_logistic(n, d, seed=0):
    """Gaussian observations labelled by a random hyperplane through the origin."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = np.sign(A @ w)
    y[y == 0] = 1.0
    return A, y


# --- classic analytic test problems --------------------------------------


def _extended_rosenbrock(d):
    if d < 2 or d % 2:
        raise ProblemError(f"extended_rosenbrock needs even d >= 2, got {d}")

    def residual(x):
        r = np.empty(d)
        r[0::2] = 10.0 * (x[1::2] - x[0::2] ** 2)
        r[1::2] = 1.0 - x[0::2]
        return r

    def jvp(x, v):
        out = np.empty(d)
        out[0::2] = 10.0 * (v[1::2] - 2.0 * x[0::2] * v[0::2])
        out[1::2] = -v[0::2]
        return out

    def columns(x, idx):
        out = np.zeros((d, idx.size))
        k = np.arange(idx.size)
        odd = idx % 2 == 1
        # x_{2i+1} (0-based odd) only enters r_{2i}
        out[idx[odd] - 1, k[odd]] = 10.0
        ev = ~odd
        out[idx[ev], k[ev]] = -20.0 * x[idx[ev]]
        out[idx[ev] + 1, k[ev]] = -1.0
        return out

    def gradient(x):
        r = residual(x)
        g = np.empty(d)
        g[0::2] = -20.0 * x[0::2] * r[0::2] - r[1::2]
        g[1::2] = 10.0 * r[0::2]
        return g

    x0 = np.tile([-1.2, 1.0], d // 2)
    return residual, jvp, columns, gradient, d, x0, 0.0


def _broyden_tridiagonal(d):
    # negated Moré-Garbow-Hillstrom form: r_i = x_{i-1} + 2 x_{i+1} - (3 - 2 x_i) x_i - 1
    if d < 1:
        raise ProblemError(f"broyden_tridiagonal needs d >= 1, got {d}")

    def shifted(x):
        prev = np.concatenate([[0.0], x[:-1]])
        nxt = np.concatenate([x[1:], [0.0]])
        return prev, nxt

    def residual(x):
        prev, nxt = shifted(x)
        return prev + 2.0 * nxt - (3.0 - 2.0 * x) * x - 1.0

    def jvp(x, v):
        vp, vn = shifted(v)
        return vp + 2.0 * vn - (3.0 - 4.0 * x) * v

    def columns(x, idx):
        out = np.zeros((d, idx.size))
        k = np.arange(idx.size)
        out[idx, k] = -(3.0 - 4.0 * x[idx])
        up = idx > 0
        out[idx[up] - 1, k[up]] = 2.0
        down = idx < d - 1
        out[idx[down] + 1, k[down]] = 1.0
        return out

    def gradient(x):
        r = residual(x)
        g = -(3.0 - 4.0 * x) * r
        g[:-1] += r[1:]
        g[1:] += 2.0 * r[:-1]
        return g

    return residual, jvp, columns, gradient, d, -np.ones(d), 0.0


def _chained_singular(d):
    # overlapping Powell-singular blocks on (x_i, x_{i+1}, x_{i+2}, x_{i+3}), i = 0, 2, ..., d-4
    if d < 4 or d % 2:
        raise ProblemError(f"chained_singular needs even d >= 4, got {d}")
    starts = np.arange(0, d - 3, 2)
    nb = starts.size
    s5, s10 = np.sqrt(5.0), np.sqrt(10.0)
    i0, i1, i2, i3 = starts, starts + 1, starts + 2, starts + 3

    def residual(x):
        r = np.empty((nb, 4))
        r[:, 0] = x[i0] + 10.0 * x[i1]
        r[:, 1] = s5 * (x[i2] - x[i3])
        r[:, 2] = (x[i1] - 2.0 * x[i2]) ** 2
        r[:, 3] = s10 * (x[i0] - x[i3]) ** 2
        return r.ravel()

    def jvp(x, v):
        t1 = x[i1] - 2.0 * x[i2]
        t2 = x[i0] - x[i3]
        out = np.empty((nb, 4))
        out[:, 0] = v[i0] + 10.0 * v[i1]
        out[:, 1] = s5 * (v[i2] - v[i3])
        out[:, 2] = 2.0 * t1 * (v[i1] - 2.0 * v[i2])
        out[:, 3] = 2.0 * s10 * t2 * (v[i0] - v[i3])
        return out.ravel()

    def gradient(x):
        r = residual(x).reshape(nb, 4)
        t1 = x[i1] - 2.0 * x[i2]
        t2 = x[i0] - x[i3]
        w2 = 2.0 * t1 * r[:, 2]
        w3 = 2.0 * s10 * t2 * r[:, 3]
        g = np.zeros(d)
        np.add.at(g, i0, r[:, 0] + w3)
        np.add.at(g, i1, 10.0 * r[:, 0] + w2)
        np.add.at(g, i2, s5 * r[:, 1] - 2.0 * w2)
        np.add.at(g, i3, -s5 * r[:, 1] - w3)
        return g

    x0 = np.tile([3.0, -1.0, 0.0, 1.0], d // 4 + 1)[:d]
    return residual, jvp, None, gradient, 4 * nb, x0, 0.0


TEST_PROBLEMS = {
    "extended_rosenbrock": _extended_rosenbrock,
    "broyden_tridiagonal": _broyden_tridiagonal,
    "chained_singular": _chained_singular,
}


def build_test_problem(name, d) -> NlsProblem:
    """Build a classic square-ish nonlinear least-squares test problem.

    ``extended_rosenbrock`` (even ``d``), ``broyden_tridiagonal`` (any ``d``)
    and ``chained_singular`` (even ``d >= 4``, ``2d - 4`` residuals) all have
    ``f* = 0``. The returned problem carries the customary starting point in
    ``x0``.
    """
    try:
        maker = TEST_PROBLEMS[name]
    except KeyError:
        raise ProblemError(f"unknown test problem {name!r}; choose from {sorted(TEST_PROBLEMS)}") from None
    residual, jvp, columns, gradient, n, x0, f_star = maker(int(d))
    return NlsProblem(
        d=int(d),
        n=n,
        residual_fn=residual,
        jvp_fn=jvp,
        columns_fn=columns,
        gradient_fn=gradient,
        name=name,
        x0=x0,
        f_star=f_star,
    )
