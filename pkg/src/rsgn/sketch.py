"""Random sketching matrices S in R^{l x d} acting on the variable space.

Four ensembles are supported:

* ``gaussian``  -- dense, i.i.d. N(0, 1/l) entries.
* ``hashing``   -- s-hashing: each column has ``s`` nonzeros ``+-1/sqrt(s)`` in
  distinct rows.
* ``sampling``  -- each row selects one coordinate uniformly (with replacement
  across rows) and scales it by ``sqrt(d/l)``; gives block-coordinate steps.
* ``identity``  -- ``S = I_d`` (requires ``l == d``).

Sparse kinds store their payload as ``(row, col, value)`` triples sorted by
column. Operators are immutable once drawn.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SketchError",
    "DimensionError",
    "ParameterError",
    "SketchKind",
    "SketchOperator",
    "draw",
    "sampling_matrix",
    "apply_vec",
    "apply_transpose",
    "column_support",
    "operator_norm_estimate",
    "embedding_trial",
]

KINDS = ("gaussian", "hashing", "sampling", "identity")


class SketchError(ValueError):
    pass


class DimensionError(SketchError):
    pass


class ParameterError(SketchError):
    pass


@dataclass(frozen=True)
class SketchKind:
    """Name of a sketching ensemble plus its parameter (``s`` for hashing)."""

    name: str
    s: int = 1

    def __post_init__(self):
        if self.name not in KINDS:
            raise ParameterError(f"unknown sketch kind {self.name!r}; expected one of {KINDS}")
        if self.name == "hashing" and self.s < 1:
            raise ParameterError(f"hashing needs s >= 1, got {self.s}")

    @classmethod
    def gaussian(cls):
        return cls("gaussian")

    @classmethod
    def hashing(cls, s=1):
        return cls("hashing", int(s))

    @classmethod
    def sampling(cls):
        return cls("sampling")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def parse(cls, text: str) -> "SketchKind":
        """Parse ``"gaussian"``, ``"sampling"``, ``"identity"`` or ``"hashing:<s>"``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "hashing":
            try:
                return cls.hashing(int(arg) if arg else 1)
            except ValueError:
                raise ParameterError(f"bad hashing parameter in {text!r}") from None
        if arg:
            raise ParameterError(f"sketch kind {name!r} takes no parameter")
        return cls(name)

    def __str__(self):
        return f"hashing:{self.s}" if self.name == "hashing" else self.name


@dataclass(frozen=True, eq=False)
class SketchOperator:
    kind: SketchKind
    l: int
    d: int
    dense: np.ndarray | None = None
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    vals: np.ndarray | None = None
    _support: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        return (self.l, self.d)

    @property
    def is_dense(self):
        return self.dense is not None

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.d,):
            raise DimensionError(f"expected vector of length {self.d}, got shape {y.shape}")
        if self.dense is not None:
            return self.dense @ y
        return np.bincount(self.rows, weights=self.vals * y[self.cols], minlength=self.l)

    def apply_transpose(self, s):
        s = np.asarray(s, dtype=float)
        if s.shape != (self.l,):
            raise DimensionError(f"expected vector of length {self.l}, got shape {s.shape}")
        if self.dense is not None:
            return self.dense.T @ s
        return np.bincount(self.cols, weights=self.vals * s[self.rows], minlength=self.d)

    def transpose_matrix(self):
        """Dense ``S^T`` as a ``d x l`` array."""
        if self.dense is not None:
            return self.dense.T.copy()
        out = np.zeros((self.d, self.l))
        np.add.at(out, (self.cols, self.rows), self.vals)
        return out

    def to_dense(self):
        return self.transpose_matrix().T.copy()

    def column_support(self):
        if self._support is None:
            return None
        return self._support.copy()

    @property
    def scale(self):
        """Common magnitude of the nonzeros for sampling/identity sketches."""
        if self.kind.name == "sampling":
            return float(np.sqrt(self.d / self.l))
        if self.kind.name == "identity":
            return 1.0
        raise SketchError(f"{self.kind} sketch has no common scale")


def _check_dims(l, d):
    if not (isinstance(l, (int, np.integer)) and isinstance(d, (int, np.integer))):
        raise DimensionError(f"sketch dimensions must be integers, got l={l!r}, d={d!r}")
    if l < 1 or l > d:
        raise DimensionError(f"sketch needs 1 <= l <= d, got l={l}, d={d}")


def _hashing_rows(s, l, d, rng):
    # rows[j] = s distinct rows for column j, uniform without replacement
    if s * s <= l:
        rows = rng.integers(0, l, size=(d, s))
        while True:
            srt = np.sort(rows, axis=1)
            bad = np.flatnonzero((np.diff(srt, axis=1) == 0).any(axis=1))
            if bad.size == 0:
                return rows
            rows[bad] = rng.integers(0, l, size=(bad.size, s))
    perm = rng.permuted(np.tile(np.arange(l), (d, 1)), axis=1)
    return perm[:, :s]


def draw(kind, l, d, rng) -> SketchOperator:
    """Draw one sketch ``S in R^{l x d}`` from ``kind`` using generator ``rng``.

    ``rng`` may be a :class:`numpy.random.Generator` or anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if isinstance(kind, str):
        kind = SketchKind.parse(kind)
    _check_dims(l, d)
    l, d = int(l), int(d)
    rng = np.random.default_rng(rng)

    if kind.name == "gaussian":
        mat = rng.standard_normal((l, d)) / np.sqrt(l)
        mat.flags.writeable = False
        return SketchOperator(kind, l, d, dense=mat)

    if kind.name == "identity":
        if l != d:
            raise DimensionError(f"identity sketch needs l == d, got l={l}, d={d}")
        idx = np.arange(d)
        return _sparse(kind, l, d, idx, idx, np.ones(d), support=idx)

    if kind.name == "sampling":
        picked = rng.integers(0, d, size=l)
        rows = np.arange(l)
        vals = np.full(l, np.sqrt(d / l))
        return _sparse(kind, l, d, rows, picked, vals, support=picked)

    # hashing
    s = kind.s
    if s > l:
        raise ParameterError(f"hashing needs s <= l, got s={s}, l={l}")
    rows = _hashing_rows(s, l, d, rng).ravel()
    signs = rng.choice(np.array([-1.0, 1.0]), size=d * s)
    cols = np.repeat(np.arange(d), s)
    return _sparse(kind, l, d, rows, cols, signs / np.sqrt(s))


def sampling_matrix(indices, d) -> SketchOperator:
    """Sampling sketch with prescribed coordinates (row ``i`` selects ``indices[i]``)."""
    picked = np.asarray(indices, dtype=np.intp).ravel()
    l = picked.size
    _check_dims(l, d)
    if picked.min() < 0 or picked.max() >= d:
        raise DimensionError(f"coordinates must lie in [0, {d})")
    return _sparse(SketchKind.sampling(), l, int(d), np.arange(l), picked, np.full(l, np.sqrt(d / l)), support=picked)


def _sparse(kind, l, d, rows, cols, vals, support=None):
    order = np.argsort(cols, kind="stable")
    arrays = [np.ascontiguousarray(a[order]) for a in (rows.astype(np.intp), cols.astype(np.intp), vals.astype(float))]
    for a in arrays:
        a.flags.writeable = False
    if support is not None:
        support = np.asarray(support, dtype=np.intp).copy()
        support.flags.writeable = False
    return SketchOperator(kind, l, d, rows=arrays[0], cols=arrays[1], vals=arrays[2], _support=support)


def apply_vec(S: SketchOperator, y) -> np.ndarray:
    """Return ``S @ y``."""
    return S.apply(y)


def apply_transpose(S: SketchOperator, s) -> np.ndarray:
    """Return ``S.T @ s``."""
    return S.apply_transpose(s)


def column_support(S: SketchOperator):
    """Selected coordinates (row order) for sampling/identity sketches, else ``None``."""
    return S.column_support()


def operator_norm_estimate(S: SketchOperator, iterations=100, seed=0) -> float:
    """Power-iteration estimate of the spectral norm ``||S||_2``.

    Each iterate ``||S v||`` with ``||v|| = 1`` is a lower bound, so the
    returned value approaches the norm from below.
    """
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    v = np.random.default_rng(seed).standard_normal(S.d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iterations):
        sv = S.apply(v)
        est = max(est, float(np.linalg.norm(sv)))
        w = S.apply_transpose(sv)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
    return est


def embedding_trial(kind, l, d, epsilon_S, trials, rng, y=None, one_sided=False) -> float:
    """Empirical probability that a fresh sketch distorts ``||y||^2`` by more than ``epsilon_S``.

    Parameters
    ----------
    kind : SketchKind or str
    l, d : int
        Sketch dimensions.
    epsilon_S : float
        Relative distortion allowed, in (0, 1).
    trials : int
        Number of independent sketches.
    rng : Generator or seed
    y : array_like, optional
        Fixed test vector. Defaults to a uniformly random unit direction drawn
        once from ``rng``.
    one_sided : bool
        Count only ``||Sy||^2 < (1-eps)||y||^2`` as failure (the lower bound
        the gradient embedding needs).

    Returns
    -------
    float
        Fraction of trials with ``||Sy||^2`` outside ``[(1-eps)||y||^2, (1+eps)||y||^2]``
        (or below the lower end when ``one_sided``).
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if not 0.0 < epsilon_S < 1.0:
        raise ParameterError(f"epsilon_S must lie in (0, 1), got {epsilon_S}")
    rng = np.random.default_rng(rng)
    if y is None:
        y = rng.standard_normal(d)
    y = np.asarray(y, dtype=float)
    if y.shape != (d,):
        raise DimensionError(f"test vector must have length {d}")
    ny2 = float(y @ y)
    upper = math.inf if one_sided else (1.0 + epsilon_S) * ny2
    failures = 0
    for _ in range(trials):
        sy = draw(kind, l, d, rng).apply(y)
        sy2 = float(sy @ sy)
        if not (1.0 - epsilon_S) * ny2 <= sy2 <= upper:
            failures += 1
    return failures / trials
