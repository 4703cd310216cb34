"""Approximate minimisation of the reduced Gauss-Newton model.

The model in the sketched subspace is::

    m(s) = f0 + <g, s> + 0.5 <s, B s>,   g = J_S^T r,  B = J_S^T J_S

``B`` is only ever applied to vectors. Steps returned by the trust-region
solvers satisfy the Cauchy decrease condition with ``c1 = 1/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ReducedModel",
    "SubproblemResult",
    "cauchy_point",
    "steihaug_cg",
    "regularized_solve",
    "verify_cauchy",
    "B_NORM_ITERATIONS",
]

B_NORM_ITERATIONS = 30
CAUCHY_SLACK = 1e-12


@dataclass(eq=False)
class ReducedModel:
    f0: float
    g: np.ndarray
    matvec: Callable[[np.ndarray], np.ndarray]
    _B_norm: float | None = field(default=None, repr=False)

    @classmethod
    def from_jacobian(cls, J_S, r, f0=None):
        """Model built from a sketched Jacobian ``J_S`` (``n x l``) and residual ``r``."""
        J_S = np.asarray(J_S, dtype=float)
        r = np.asarray(r, dtype=float)
        if f0 is None:
            f0 = 0.5 * float(r @ r)
        return cls(float(f0), J_S.T @ r, lambda v: J_S.T @ (J_S @ v))

    @classmethod
    def from_matrix(cls, g, B, f0=0.0):
        B = np.asarray(B, dtype=float)
        return cls(float(f0), np.asarray(g, dtype=float), lambda v: B @ v)

    @property
    def dim(self):
        return self.g.size

    def B(self, v):
        return self.matvec(np.asarray(v, dtype=float))

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return self.f0 + float(self.g @ s) + 0.5 * float(s @ self.B(s))

    def decrease(self, s):
        """``m(0) - m(s)``."""
        s = np.asarray(s, dtype=float)
        return -(float(self.g @ s) + 0.5 * float(s @ self.B(s)))

    @property
    def g_norm(self):
        return float(np.linalg.norm(self.g))

    @property
    def B_norm_est(self):
        """Lower estimate of ``||B||_2``, cached.

        Power iteration from a fixed random start, combined with the Rayleigh
        quotient at ``g``; both are lower bounds on the spectral norm.
        """
        if self._B_norm is None:
            self._B_norm = self._estimate_norm()
        return self._B_norm

    def _estimate_norm(self):
        l = self.dim
        est = 0.0
        gn = self.g_norm
        if gn > 0:
            est = max(est, float(self.g @ self.B(self.g)) / gn**2)
        v = np.random.default_rng(0).standard_normal(l)
        v /= np.linalg.norm(v)
        for _ in range(B_NORM_ITERATIONS):
            w = self.B(v)
            nw = float(np.linalg.norm(w))
            est = max(est, nw)
            if nw == 0.0:
                break
            v = w / nw
        return est


@dataclass
class SubproblemResult:
    s: np.ndarray
    predicted_decrease: float
    on_boundary: bool = False
    cg_iterations: int = 0

    @property
    def step_norm(self):
        return float(np.linalg.norm(self.s))


def _boundary_tau(s, p, delta):
    """Positive root ``tau`` of ``||s + tau p|| = delta``."""
    a = float(p @ p)
    b = 2.0 * float(s @ p)
    c = float(s @ s) - delta * delta
    disc = math.sqrt(max(b * b - 4.0 * a * c, 0.0))
    # numerically stable root selection; c <= 0 inside the region
    if b >= 0:
        return (-2.0 * c) / (b + disc) if b + disc > 0 else 0.0
    return (-b + disc) / (2.0 * a)


def cauchy_point(model: ReducedModel, delta: float) -> SubproblemResult:
    """Minimiser of the model along ``-g`` inside ``||s|| <= delta``."""
    g = model.g
    gn = model.g_norm
    if gn == 0.0:
        return SubproblemResult(np.zeros_like(g), 0.0)
    curv = float(g @ model.B(g))
    alpha = delta / gn
    on_boundary = True
    if curv > 0:
        interior = gn * gn / curv
        if interior < alpha:
            alpha, on_boundary = interior, False
    s = -alpha * g
    return SubproblemResult(s, model.decrease(s), on_boundary, 0)


def steihaug_cg(model: ReducedModel, delta: float, rel_tol=1e-8, max_iter=None) -> SubproblemResult:
    """Truncated CG (Steihaug-Toint) for the trust-region subproblem.

    Starts from ``s = 0`` and runs CG on ``B s = -g``; leaves along the current
    direction to the boundary when the radius is crossed or curvature is
    (near) zero. The result never does worse than the Cauchy point.
    """
    g = model.g
    l = g.size
    if max_iter is None:
        max_iter = 2 * l
    gn = model.g_norm
    if gn == 0.0:
        return SubproblemResult(np.zeros_like(g), 0.0)
    cauchy = cauchy_point(model, delta)

    s = np.zeros(l)
    res = g.copy()  # gradient of the model at s
    p = -res
    rr = gn * gn
    tol = rel_tol * gn
    on_boundary = False
    it = 0
    while it < max_iter:
        Bp = model.B(p)
        kappa = float(p @ Bp)
        pp = float(p @ p)
        if kappa <= 1e-30 * pp:
            s = s + _boundary_tau(s, p, delta) * p
            on_boundary = True
            it += 1
            break
        alpha = rr / kappa
        s_next = s + alpha * p
        if np.linalg.norm(s_next) >= delta:
            s = s + _boundary_tau(s, p, delta) * p
            on_boundary = True
            it += 1
            break
        s = s_next
        res = res + alpha * Bp
        it += 1
        rr_new = float(res @ res)
        if math.sqrt(rr_new) <= tol:
            break
        p = -res + (rr_new / rr) * p
        rr = rr_new

    dec = model.decrease(s)
    if not np.isfinite(dec) or dec < cauchy.predicted_decrease:
        return SubproblemResult(cauchy.s, cauchy.predicted_decrease, cauchy.on_boundary, it)
    return SubproblemResult(s, dec, on_boundary, it)


def regularized_solve(model: ReducedModel, sigma: float, rel_tol=1e-8, max_iter=None) -> SubproblemResult:
    """Minimise ``m(s) + sigma/2 ||s||^2`` by CG on ``(B + sigma I) s = -g``.

    The reported decrease is ``m(0) - m(s)`` without the regularisation term.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = model.g
    l = g.size
    if max_iter is None:
        max_iter = 2 * l
    gn = model.g_norm
    if gn == 0.0:
        return SubproblemResult(np.zeros_like(g), 0.0)

    s = np.zeros(l)
    res = g.copy()
    p = -res
    rr = gn * gn
    tol = rel_tol * gn
    it = 0
    while it < max_iter and math.sqrt(rr) > tol:
        Ap = model.B(p) + sigma * p
        alpha = rr / float(p @ Ap)
        s = s + alpha * p
        res = res + alpha * Ap
        rr_new = float(res @ res)
        p = -res + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return SubproblemResult(s, model.decrease(s), False, it)


def verify_cauchy(model: ReducedModel, delta, s, c1=0.5) -> bool:
    """Check ``m(0) - m(s) >= c1 ||g|| min(delta, ||g|| / ||B||)`` up to ``1e-12``."""
    if not 0.0 < c1 <= 1.0:
        raise ValueError(f"c1 must lie in (0, 1], got {c1}")
    gn = model.g_norm
    bn = model.B_norm_est
    radius_term = delta if bn == 0.0 else min(delta, gn / bn)
    return model.decrease(s) >= c1 * gn * radius_term - CAUCHY_SLACK
