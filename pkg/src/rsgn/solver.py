"""Randomised subspace Gauss-Newton outer iterations.

:func:`rsgn_tr` globalises with a trust region, :func:`rsgn_qr` with a
quadratic regularisation ``sigma/2 ||s||^2``. Both draw a fresh sketch every
iteration, build the reduced model from ``J(x) S^T`` and accept the step
``x + S^T s`` when the actual-to-predicted decrease ratio reaches ``eta``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .problems import EvaluationError, NlsProblem, eval_full_gradient, eval_sketched_jacobian
from .sketch import SketchKind, draw
from .subproblem import ReducedModel, regularized_solve, steihaug_cg, verify_cauchy

__all__ = [
    "ConfigError",
    "TrConfig",
    "QrConfig",
    "IterRecord",
    "RunTrace",
    "compute_rho",
    "validate_config",
    "rsgn_tr",
    "rsgn_qr",
    "iteration_seed",
]

logger = logging.getLogger(__name__)

RHO_DENOM_EPS = 1e-15


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class _Config:
    eta: float = 0.1
    gamma1: float = 0.5
    c: int = 1
    gamma2: float | None = None
    l: int | None = None
    sketch_kind: SketchKind = field(default_factory=SketchKind.sampling)
    c1: float = 0.5
    max_iters: int = 100
    f_target: float | None = None
    grad_diag_every: int = 0
    seed: int = 0
    cg_rel_tol: float = 1e-8
    cg_max_iter: int | None = None

    def __post_init__(self):
        if isinstance(self.sketch_kind, str):
            object.__setattr__(self, "sketch_kind", SketchKind.parse(self.sketch_kind))
        if self.gamma2 is None and isinstance(self.c, int) and 0 < self.gamma1 < 1:
            object.__setattr__(self, "gamma2", self.gamma1 ** (-self.c))

    def block_size(self, d):
        return d if self.l is None else int(self.l)

    def snapshot(self):
        out = asdict(self)
        out["sketch_kind"] = str(self.sketch_kind)
        return out


@dataclass(frozen=True)
class TrConfig(_Config):
    """Trust-region parameters. ``gamma2`` defaults to ``gamma1 ** -c``."""

    delta0: float = 1.0
    delta_max: float | None = None
    delta_min: float = 1e-16


@dataclass(frozen=True)
class QrConfig(_Config):
    """Regularisation parameters; ``sigma`` shrinks by ``gamma2`` on success and grows by ``1/gamma1`` on failure."""

    sigma0: float = 1.0
    sigma_min: float = 1e-16
    sigma_max: float = 1e16


@dataclass
class IterRecord:
    k: int
    f_value: float  # objective after the update, f(x_{k+1})
    rho: float
    delta_or_sigma: float  # radius/regulariser used to compute this step
    accepted: bool
    predicted_decrease: float
    step_norm: float
    sketch_seed: int
    wall_clock_ms: float  # cumulative, solver loop only
    cauchy_ok: bool = True
    cg_iterations: int = 0
    full_gradient_norm: float | None = None


@dataclass
class RunTrace:
    config: dict
    records: list
    x: np.ndarray
    termination: str
    f_initial: float
    grad_norm_initial: float | None = None
    iterates: list | None = None  # x_0, x_1, ... when requested

    @property
    def f_final(self):
        return self.records[-1].f_value if self.records else self.f_initial

    @property
    def iterations(self):
        return len(self.records)

    def f_values(self):
        """``[f(x_0), f(x_1), ...]``."""
        return np.array([self.f_initial] + [r.f_value for r in self.records])

    def iterations_to(self, f_target):
        """First iteration count ``k`` with ``f(x_k) <= f_target``, or ``None``."""
        hits = np.flatnonzero(self.f_values() <= f_target)
        return int(hits[0]) if hits.size else None

    def check_monotone(self):
        """True when every accepted step strictly decreased ``f``."""
        prev = self.f_initial
        for rec in self.records:
            if rec.accepted:
                if not rec.f_value < prev:
                    return False
                prev = rec.f_value
            elif rec.f_value != prev:
                return False
        return True

    def comparable(self):
        """Record contents without timing, for determinism checks."""
        rows = []
        for rec in self.records:
            d = asdict(rec)
            d.pop("wall_clock_ms")
            rows.append(d)
        return rows


def compute_rho(f_current, f_trial, model_decrease):
    """Actual over predicted decrease; ``-inf`` when the prediction vanishes or ``f_trial`` is non-finite."""
    if not math.isfinite(f_trial):
        return -math.inf
    if not model_decrease > RHO_DENOM_EPS * max(1.0, abs(f_current)):
        return -math.inf
    return (f_current - f_trial) / model_decrease


def validate_config(config, d=None):
    """Check structural constraints and report the success-probability threshold.

    Returns a list of informational messages; raises :class:`ConfigError` on
    violations (``gamma2 != gamma1**-c``, ``eta`` outside (0, 1), ``l > d``, ...).
    """
    errors = []
    if not (isinstance(config.c, (int, np.integer)) and config.c >= 1):
        errors.append(f"c must be a positive integer, got {config.c!r}")
    if not 0 < config.gamma1 < 1:
        errors.append(f"gamma1 must lie in (0, 1), got {config.gamma1}")
    if not errors:
        expected = config.gamma1 ** (-config.c)
        if config.gamma2 is None or not math.isclose(config.gamma2, expected, rel_tol=1e-12):
            errors.append(f"gamma2 must equal gamma1**-c = {expected:g}, got {config.gamma2}")
    if not 0 < config.eta < 1:
        errors.append(f"eta must lie in (0, 1), got {config.eta}")
    if not 0 < config.c1 <= 1:
        errors.append(f"c1 must lie in (0, 1], got {config.c1}")
    if config.max_iters < 0:
        errors.append("max_iters must be nonnegative")
    if config.grad_diag_every < 0:
        errors.append("grad_diag_every must be nonnegative")
    if config.l is not None and config.l < 1:
        errors.append(f"l must be >= 1, got {config.l}")
    if d is not None and config.l is not None and config.l > d:
        errors.append(f"l = {config.l} exceeds d = {d}")
    if d is not None and config.sketch_kind.name == "identity" and config.block_size(d) != d:
        errors.append("identity sketch requires l == d")
    if config.sketch_kind.name == "hashing" and config.l is not None and config.sketch_kind.s > config.l:
        errors.append(f"hashing s = {config.sketch_kind.s} exceeds l = {config.l}")
    if isinstance(config, TrConfig) and not config.delta0 > 0:
        errors.append(f"delta0 must be positive, got {config.delta0}")
    if isinstance(config, QrConfig) and not config.sigma0 > 0:
        errors.append(f"sigma0 must be positive, got {config.sigma0}")
    if errors:
        raise ConfigError("; ".join(errors))

    c2 = (config.c + 2) / (2 * config.c + 2)
    return [
        f"c2 = {c2:.6g}",
        f"convergence theory needs the sketch to embed the gradient with probability 1 - delta_S > c2 = {c2:.6g}",
    ]


def iteration_seed(seed, k):
    """Deterministic per-iteration sketch seed."""
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1, dtype=np.uint32)[0])


def _grad_norm(problem, x):
    return float(np.linalg.norm(eval_full_gradient(problem, x)))


def _run(problem: NlsProblem, config, x0, variant, store_iterates=False):
    d = problem.d
    validate_config(config, d)
    l = config.block_size(d)
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,):
        raise ConfigError(f"x0 must have length {d}")

    if variant == "tr":
        param = float(config.delta0)
        delta_max = config.delta_max if config.delta_max is not None else 1e6 * config.delta0
    else:
        param = float(config.sigma0)

    records = []
    iterates = [x.copy()] if store_iterates else None
    try:
        r = problem.residual(x)
    except EvaluationError as exc:
        logger.warning("non-finite objective at the initial point: %s", exc)
        return RunTrace(config.snapshot(), records, x, "numerical_failure", math.nan, iterates=iterates)
    f = f_initial = 0.5 * float(r @ r)
    grad0 = _grad_norm(problem, x) if config.grad_diag_every > 0 else None

    termination = "budget_exhausted"
    elapsed = 0.0
    for k in range(config.max_iters):
        if config.f_target is not None and f <= config.f_target:
            termination = "f_target_reached"
            break
        t0 = time.perf_counter()
        sk_seed = iteration_seed(config.seed, k)
        S = draw(config.sketch_kind, l, d, np.random.default_rng(sk_seed))
        J_S = eval_sketched_jacobian(problem, x, S).matrix
        model = ReducedModel.from_jacobian(J_S, r, f)
        if variant == "tr":
            res = steihaug_cg(model, param, config.cg_rel_tol, config.cg_max_iter)
            cauchy_ok = verify_cauchy(model, param, res.s, config.c1) if model.g_norm > 0 else True
        else:
            res = regularized_solve(model, param, config.cg_rel_tol, config.cg_max_iter)
            cauchy_ok = True

        x_trial = x + S.apply_transpose(res.s)
        try:
            r_trial = problem.residual(x_trial)
            f_trial = 0.5 * float(r_trial @ r_trial)
        except EvaluationError:
            r_trial, f_trial = None, math.inf
        rho = compute_rho(f, f_trial, res.predicted_decrease)
        accepted = rho >= config.eta
        used = param
        if accepted:
            x, r, f = x_trial, r_trial, f_trial
        if iterates is not None:
            iterates.append(x.copy())
        failed = False
        if variant == "tr":
            param = min(param * config.gamma2, delta_max) if accepted else param * config.gamma1
            failed = param < config.delta_min
        else:
            param = max(config.sigma_min, param / config.gamma2) if accepted else param / config.gamma1
            failed = param > config.sigma_max
        elapsed += time.perf_counter() - t0

        gnorm = None
        if config.grad_diag_every > 0 and (k + 1) % config.grad_diag_every == 0:
            gnorm = _grad_norm(problem, x)
        records.append(
            IterRecord(
                k=k,
                f_value=f,
                rho=rho,
                delta_or_sigma=used,
                accepted=bool(accepted),
                predicted_decrease=res.predicted_decrease,
                step_norm=res.step_norm,
                sketch_seed=sk_seed,
                wall_clock_ms=1e3 * elapsed,
                cauchy_ok=bool(cauchy_ok),
                cg_iterations=res.cg_iterations,
                full_gradient_norm=gnorm,
            )
        )
        if failed:
            termination = "numerical_failure"
            logger.warning("step-control parameter left its admissible range at iteration %d", k)
            break
    else:
        if config.f_target is not None and f <= config.f_target:
            termination = "f_target_reached"

    return RunTrace(config.snapshot(), records, x, termination, f_initial, grad0, iterates)


def rsgn_tr(problem: NlsProblem, config: TrConfig | None = None, x0=None, store_iterates=False) -> RunTrace:
    """Trust-region R-SGN.

    ``x0`` defaults to the zero vector. With ``store_iterates`` the trace keeps
    a copy of every iterate in ``trace.iterates``.
    """
    config = TrConfig() if config is None else config
    if not isinstance(config, TrConfig):
        raise ConfigError("rsgn_tr needs a TrConfig")
    return _run(problem, config, x0, "tr", store_iterates)


def rsgn_qr(problem: NlsProblem, config: QrConfig | None = None, x0=None, store_iterates=False) -> RunTrace:
    """Quadratic-regularisation R-SGN. ``x0`` defaults to the zero vector."""
    config = QrConfig() if config is None else config
    if not isinstance(config, QrConfig):
        raise ConfigError("rsgn_qr needs a QrConfig")
    return _run(problem, config, x0, "qr", store_iterates)


def with_overrides(config, **kwargs):
    """Copy of ``config`` with fields replaced; ``gamma2`` is re-derived when ``gamma1``/``c`` change."""
    if ("gamma1" in kwargs or "c" in kwargs) and "gamma2" not in kwargs:
        kwargs["gamma2"] = None
    return replace(config, **kwargs)
