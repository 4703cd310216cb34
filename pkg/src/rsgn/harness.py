"""Experiment driver: seeded sweeps over sketch kinds and block sizes.

A run writes two files into the output directory:

``traces.csv``
    One row per iteration per run, columns ``TRACE_COLUMNS``. Iteration 0 is
    the starting point (empty ``rho``/``accepted``).
``summary.json``
    Per-cell aggregates (median final ``f``, iterations to target, timings).

Usage::

    rsgn run --config experiment.toml --out results/ --workers 2
    rsgn summarize --trace results/traces.csv
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datasets import DatasetError, load_dataset
from .problems import build_linear, build_logistic, build_test_problem, make_separable_logistic
from .sketch import SketchError, SketchKind
from .solver import ConfigError, QrConfig, TrConfig, rsgn_qr, rsgn_tr

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ExperimentSpec",
    "SpecError",
    "TraceParseError",
    "TRACE_COLUMNS",
    "load_spec",
    "child_seed",
    "block_size",
    "build_problem",
    "run_experiment",
    "summarize",
    "main",
]

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "experiment_id",
    "sketch",
    "fraction",
    "run",
    "iter",
    "f",
    "delta",
    "rho",
    "accepted",
    "wall_ms",
    "grad_norm",
)
EXIT_OK, EXIT_CONFIG, EXIT_DATASET = 0, 2, 3
SOLVER_KEYS = {"eta", "gamma1", "c", "delta0", "sigma0", "c1", "cg_rel_tol", "cg_max_iter", "delta_max", "sigma_min"}


class SpecError(ValueError):
    pass


class TraceParseError(ValueError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass
class ExperimentSpec:
    problem: dict
    experiment_id: str = "experiment"
    variant: str = "tr"
    sketch_kinds: list = field(default_factory=lambda: ["sampling"])
    fractions: list = field(default_factory=lambda: [1.0])
    runs: int = 5
    base_seed: int = 0
    max_iters: int = 100
    f_target: float | None = 1e-5
    grad_diag_every: int = 0
    solver: dict = field(default_factory=dict)
    output: str = "results"
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.problem, dict) or "type" not in self.problem:
            raise SpecError("problem must be a table with a 'type' key")
        if self.variant not in ("tr", "qr"):
            raise SpecError(f"variant must be 'tr' or 'qr', got {self.variant!r}")
        if isinstance(self.sketch_kinds, str):
            self.sketch_kinds = [self.sketch_kinds]
        try:
            self.kinds = [SketchKind.parse(str(k)) for k in self.sketch_kinds]
        except SketchError as exc:
            raise SpecError(str(exc)) from None
        if not self.fractions or any(not 0 < float(fr) <= 1 for fr in self.fractions):
            raise SpecError(f"fractions must lie in (0, 1], got {self.fractions}")
        self.fractions = [float(fr) for fr in self.fractions]
        if int(self.runs) < 1:
            raise SpecError("runs must be >= 1")
        if int(self.max_iters) < 0:
            raise SpecError("max_iters must be >= 0")
        if int(self.workers) < 1:
            raise SpecError("workers must be >= 1")
        unknown = set(self.solver) - SOLVER_KEYS
        if unknown:
            raise SpecError(f"unknown solver options {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise SpecError(f"unknown experiment keys {sorted(unknown)}")
        if "problem" not in data:
            raise SpecError("missing required key 'problem'")
        return cls(**data)

    def to_dict(self):
        out = asdict(self)
        out.pop("kinds", None)
        return out


def load_spec(path) -> ExperimentSpec:
    """Read an experiment description from a JSON or TOML file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise SpecError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise SpecError("config must be a key/value document")
    return ExperimentSpec.from_dict(data)


def child_seed(base_seed, kind_index, fraction_index, run_index):
    """Seed for one cell/run, independent of sweep order."""
    ss = np.random.SeedSequence([int(base_seed), int(kind_index), int(fraction_index), int(run_index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def block_size(fraction, d):
    return max(1, int(round(fraction * d)))


def build_problem(pspec, base_dir=None):
    """Instantiate the problem table of an experiment; returns ``(problem, x0)``."""
    pspec = dict(pspec)
    kind = pspec.pop("type")
    if kind == "logistic_synthetic":
        A, y = make_separable_logistic(int(pspec.get("n", 500)), int(pspec.get("d", 200)), int(pspec.get("seed", 0)))
        p = build_logistic(A, y, float(pspec.get("lambda", 1e-10)), bool(pspec.get("intercept", False)))
        return p, np.zeros(p.d)
    if kind == "dataset":
        path = Path(pspec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        opts = {}
        if "label_column" in pspec:
            opts["label_column"] = int(pspec["label_column"])
        if "n_features" in pspec:
            opts["n_features"] = int(pspec["n_features"])
        try:
            A, y = load_dataset(path, pspec.get("format", "libsvm_sparse"), **opts)
        except OSError as exc:
            raise DatasetError(f"cannot open {path}: {exc}") from None
        p = build_logistic(A, y, float(pspec.get("lambda", 1e-10)), bool(pspec.get("intercept", False)))
        return p, np.zeros(p.d)
    if kind == "test_problem":
        p = build_test_problem(pspec["name"], int(pspec["d"]))
        x0 = np.zeros(p.d) if pspec.get("start", "standard") == "zero" else p.x0
        return p, x0
    if kind == "linear":
        p = build_linear(np.asarray(pspec["A"], dtype=float), np.asarray(pspec["b"], dtype=float))
        return p, np.zeros(p.d)
    if kind == "linear_random":
        rng = np.random.default_rng(int(pspec.get("seed", 0)))
        n, d = int(pspec.get("n", 50)), int(pspec.get("d", 20))
        p = build_linear(rng.standard_normal((n, d)), rng.standard_normal(n))
        return p, np.zeros(p.d)
    raise SpecError(f"unknown problem type {kind!r}")


def _solve(problem, x0, spec, kind, l, seed):
    common = dict(
        l=l,
        sketch_kind=kind,
        max_iters=int(spec.max_iters),
        f_target=spec.f_target,
        grad_diag_every=int(spec.grad_diag_every),
        seed=seed,
    )
    opts = dict(spec.solver)
    if spec.variant == "tr":
        opts.pop("sigma0", None)
        opts.pop("sigma_min", None)
        return rsgn_tr(problem, TrConfig(**common, **opts), x0)
    opts.pop("delta0", None)
    opts.pop("delta_max", None)
    return rsgn_qr(problem, QrConfig(**common, **opts), x0)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _trace_rows(spec, kind, fraction, run, trace):
    first = trace.records[0].delta_or_sigma if trace.records else None
    rows = [[spec.experiment_id, str(kind), fraction, run, 0, trace.f_initial, first, None, None, 0.0, trace.grad_norm_initial]]
    for rec in trace.records:
        rows.append(
            [
                spec.experiment_id,
                str(kind),
                fraction,
                run,
                rec.k + 1,
                rec.f_value,
                rec.delta_or_sigma,
                rec.rho,
                rec.accepted,
                rec.wall_clock_ms,
                rec.full_gradient_norm,
            ]
        )
    return [[_fmt(v) for v in row] for row in rows]


def _run_summary(trace, f_target, seed, l):
    wall = trace.records[-1].wall_clock_ms if trace.records else 0.0
    return {
        "seed": seed,
        "l": l,
        "final_f": trace.f_final,
        "iterations": trace.iterations,
        "iterations_to_target": trace.iterations_to(f_target) if f_target is not None else None,
        "termination": trace.termination,
        "wall_ms": wall,
        "ms_per_iteration": wall / trace.iterations if trace.iterations else 0.0,
        "monotone": trace.check_monotone(),
    }


def _aggregate(runs):
    finals = [r["final_f"] for r in runs]
    reached = [r["iterations_to_target"] for r in runs if r["iterations_to_target"] is not None]
    return {
        "runs": len(runs),
        "median_final_f": statistics.median(finals),
        "min_final_f": min(finals),
        "max_final_f": max(finals),
        "median_iterations_to_target": statistics.median(reached) if reached else "not reached",
        "not_reached": len(runs) - len(reached),
        "median_wall_ms": statistics.median(r["wall_ms"] for r in runs),
        "median_ms_per_iteration": statistics.median(r["ms_per_iteration"] for r in runs),
    }


def run_experiment(spec, out_dir=None, workers=None, base_dir=None):
    """Run every (sketch kind, fraction, run) cell of ``spec``.

    Returns ``(status, summary)`` where ``status`` is 0 on completion, 2 for
    configuration problems and 3 for dataset problems. Traces and the summary
    are written under ``out_dir`` (default ``spec.output``).
    """
    try:
        if isinstance(spec, dict):
            spec = ExperimentSpec.from_dict(spec)
        problem, x0 = build_problem(spec.problem, base_dir)
    except DatasetError as exc:
        logger.error("dataset error: %s", exc)
        return EXIT_DATASET, {"error": str(exc)}
    except (SpecError, ConfigError, SketchError, KeyError, TypeError, ValueError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG, {"error": str(exc)}

    d = problem.d
    cells = []
    for ki, kind in enumerate(spec.kinds):
        for fi, fraction in enumerate(spec.fractions):
            l = block_size(fraction, d)
            if kind.name == "identity" and l != d:
                return EXIT_CONFIG, {"error": f"identity sketch needs fraction 1.0, got {fraction}"}
            for run in range(int(spec.runs)):
                cells.append((ki, kind, fi, fraction, l, run, child_seed(spec.base_seed, ki, fi, run)))

    def job(cell):
        _, kind, _, _, l, _, seed = cell
        return _solve(problem, x0, spec, kind, l, seed)

    n_workers = int(workers or spec.workers)
    try:
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                traces = list(pool.map(job, cells))
        else:
            traces = [job(c) for c in cells]
    except (ConfigError, SketchError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG, {"error": str(exc)}

    out = Path(out_dir if out_dir is not None else spec.output)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    summary_cells = {}
    for cell, trace in zip(cells, traces):
        _, kind, _, fraction, l, run, seed = cell
        writer.writerows(_trace_rows(spec, kind, fraction, run, trace))
        key = (str(kind), fraction)
        summary_cells.setdefault(key, {"sketch": str(kind), "fraction": fraction, "l": l, "per_run": []})
        summary_cells[key]["per_run"].append({"run": run, **_run_summary(trace, spec.f_target, seed, l)})
        if trace.termination == "numerical_failure":
            logger.warning("cell %s/%s run %d ended with numerical_failure", kind, fraction, run)
    (out / "traces.csv").write_text(buf.getvalue())

    summary = {
        "experiment_id": spec.experiment_id,
        "variant": spec.variant,
        "d": d,
        "n": problem.n,
        "f_target": spec.f_target,
        "spec": spec.to_dict(),
        "cells": [{**c, **_aggregate(c["per_run"])} for c in summary_cells.values()],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return EXIT_OK, summary


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _parse_float(text, row, column, allow_empty=False):
    if text == "" and allow_empty:
        return None
    try:
        return float(text)
    except ValueError:
        raise TraceParseError(f"bad {column} value {text!r}", row) from None


def summarize(trace_path, f_target=1e-5):
    """Aggregate a ``traces.csv`` file per (experiment, sketch, fraction) cell.

    Medians are over runs; runs that never reach ``f_target`` are counted in
    ``not_reached`` and left out of the iterations-to-target median.
    """
    with Path(trace_path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise TraceParseError(f"header must be {','.join(TRACE_COLUMNS)}", 1)
        runs = {}
        for rowno, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_COLUMNS):
                raise TraceParseError(f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}", rowno)
            rec = dict(zip(TRACE_COLUMNS, row))
            f = _parse_float(rec["f"], rowno, "f")
            if not math.isfinite(f):
                raise TraceParseError("non-finite f", rowno)
            it = _parse_float(rec["iter"], rowno, "iter")
            wall = _parse_float(rec["wall_ms"], rowno, "wall_ms")
            fraction = _parse_float(rec["fraction"], rowno, "fraction")
            key = (rec["experiment_id"], rec["sketch"], fraction, rec["run"])
            state = runs.setdefault(key, {"iters": [], "f": [], "wall": []})
            if state["iters"] and it <= state["iters"][-1]:
                raise TraceParseError("iterations out of order", rowno)
            state["iters"].append(int(it))
            state["f"].append(f)
            state["wall"].append(wall)

    cells = {}
    for (exp, sketch, fraction, _run), st in runs.items():
        hits = [i for i, f in zip(st["iters"], st["f"]) if f_target is not None and f <= f_target]
        n_it = st["iters"][-1]
        cells.setdefault((exp, sketch, fraction), []).append(
            {
                "final_f": st["f"][-1],
                "iterations_to_target": hits[0] if hits else None,
                "wall_ms": st["wall"][-1],
                "ms_per_iteration": st["wall"][-1] / n_it if n_it else 0.0,
            }
        )
    return [
        {"experiment_id": exp, "sketch": sketch, "fraction": fraction, **_aggregate(rs)}
        for (exp, sketch, fraction), rs in sorted(cells.items())
    ]


def format_summary(rows):
    head = f"{'experiment':<14} {'sketch':<10} {'fraction':>8} {'runs':>4} {'median f':>11} {'f range':>23} {'iters->tgt':>12} {'miss':>4} {'ms/iter':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        its = r["median_iterations_to_target"]
        its = its if isinstance(its, str) else f"{its:g}"
        lines.append(
            f"{r['experiment_id']:<14} {r['sketch']:<10} {r['fraction']:>8g} {r['runs']:>4} "
            f"{r['median_final_f']:>11.3e} {r['min_final_f']:>11.3e}-{r['max_final_f']:<11.3e} "
            f"{its:>12} {r['not_reached']:>4} {r['median_ms_per_iteration']:>9.3f}"
        )
    return "\n".join(lines)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="rsgn", description="Randomised subspace Gauss-Newton experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("--config", required=True, help="JSON or TOML experiment file")
    p_run.add_argument("--out", help="output directory (default: the config's 'output')")
    p_run.add_argument("--workers", type=int, help="concurrent runs")
    p_sum = sub.add_parser("summarize", help="aggregate a trace CSV")
    p_sum.add_argument("--trace", required=True)
    p_sum.add_argument("--f-target", type=float, default=1e-5)
    p_sum.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "run":
        try:
            spec = load_spec(args.config)
        except SpecError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        status, summary = run_experiment(spec, args.out, args.workers, base_dir=Path(args.config).parent)
        if status != EXIT_OK:
            print(f"error: {summary.get('error')}", file=sys.stderr)
            return status
        out = Path(args.out if args.out is not None else spec.output)
        print(f"wrote {out / 'traces.csv'} and {out / 'summary.json'}")
        return EXIT_OK

    try:
        rows = summarize(args.trace, args.f_target)
    except (OSError, TraceParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(rows, indent=2) if args.json else format_summary(rows))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
