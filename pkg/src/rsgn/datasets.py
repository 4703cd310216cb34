"""Readers for classification datasets in LIBSVM and dense CSV layouts.

LIBSVM lines look like ``<label> <index>:<value> <index>:<value> ...`` with
1-based, strictly increasing indices; anything after ``#`` is a comment.
CSV files hold one observation per line with the label in one column (the
last by default). In both formats labels ``{0, 1}`` are mapped to ``{-1, +1}``.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import sparse

__all__ = ["DatasetError", "load_dataset", "parse_libsvm", "parse_csv", "FORMATS"]

FORMATS = ("libsvm_sparse", "dense_csv")


class DatasetError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _to_pm1(labels):
    y = np.asarray(labels, dtype=float)
    values = set(np.unique(y).tolist())
    if values <= {0.0, 1.0}:
        return np.where(y > 0, 1.0, -1.0)
    if values <= {-1.0, 1.0}:
        return y
    raise DatasetError(f"labels must be binary (+-1 or 0/1), found {sorted(values)[:5]}")


def parse_libsvm(lines, n_features=None):
    """Parse LIBSVM text lines into ``(csr_matrix, labels)`` with 0-based columns."""
    labels, indptr, indices, data = [], [0], [], []
    max_col = -1
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *pairs = line.split()
        try:
            labels.append(float(head))
        except ValueError:
            raise DatasetError(f"bad label {head!r}", lineno) from None
        prev = 0
        for pair in pairs:
            idx, sep, val = pair.partition(":")
            if not sep:
                raise DatasetError(f"expected index:value, got {pair!r}", lineno)
            try:
                j, v = int(idx), float(val)
            except ValueError:
                raise DatasetError(f"bad entry {pair!r}", lineno) from None
            if j < 1:
                raise DatasetError(f"feature index {j} is not 1-based", lineno)
            if j <= prev:
                raise DatasetError(f"feature indices not increasing at {j}", lineno)
            prev = j
            indices.append(j - 1)
            data.append(v)
            max_col = max(max_col, j - 1)
        indptr.append(len(indices))
    if not labels:
        raise DatasetError("dataset is empty")
    ncols = max_col + 1 if n_features is None else int(n_features)
    if max_col >= ncols:
        raise DatasetError(f"feature index {max_col + 1} exceeds n_features={ncols}")
    X = sparse.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.intp), np.asarray(indptr, dtype=np.intp)),
        shape=(len(labels), ncols),
    )
    return X, _to_pm1(labels)


def parse_csv(lines, label_column=-1, delimiter=","):
    """Parse dense CSV rows into ``(ndarray, labels)``."""
    rows, labels = [], []
    width = None
    for lineno, fields in enumerate(csv.reader(lines, delimiter=delimiter), start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise DatasetError(f"non-numeric field in {fields!r}", lineno) from None
        if width is None:
            width = len(vals)
            if width < 2:
                raise DatasetError("need at least one feature and a label column", lineno)
        elif len(vals) != width:
            raise DatasetError(f"expected {width} fields, got {len(vals)}", lineno)
        labels.append(vals.pop(label_column))
        rows.append(vals)
    if not rows:
        raise DatasetError("dataset is empty")
    return np.asarray(rows, dtype=float), _to_pm1(labels)


def load_dataset(path, format="libsvm_sparse", **kwargs):
    """Load ``(observations, labels)`` from ``path``.

    ``format`` is ``"libsvm_sparse"`` (returns a CSR matrix) or ``"dense_csv"``
    (returns an ndarray). Extra keyword arguments go to the parser
    (``n_features`` for LIBSVM; ``label_column``/``delimiter`` for CSV).
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    with Path(path).open(newline="" if format == "dense_csv" else None) as fh:
        if format == "libsvm_sparse":
            return parse_libsvm(fh, **kwargs)
        return parse_csv(fh, **kwargs)
