"""Seeded replication sweeps, trace files and rate summaries.

Each replication runs the full horizon and records diagnostics at every
iteration. Besides the record at the sampled index R, it keeps the
conditional expectation of each diagnostic over R given the trajectory,
``sum_k P[R = k] * value_k``. Both average to the same E[value(x^R)] over
replications; the conditional form has far smaller variance and is what the
rate fits use.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import fit_rate, recorder_for
from .errors import ConfigurationError, NumericError
from .params import default_schedule, params_for, profile_of
from .problems import load_problem, make_problem
from .solvers import RunConfig, run

AUTO_CADENCE_LIMIT = 2048
AUTO_RECORDS = 1024
METRICS = ("V", "sqrtV", "grad_err", "grad_err_sq", "max_inner_err_sq")


def build_problem(config):
    if config.problem_file:
        return load_problem(config.problem_file)
    return make_problem(
        config.family, config.T, config.dims, config.problem_seed,
        noise_scale=config.noise, feasible=config.feasible, radius=config.radius,
    )


def resolve_cadence(N, cadence=0):
    """Record spacing; ``0`` means automatic."""
    if cadence:
        return int(cadence)
    return 1 if N <= AUTO_CADENCE_LIMIT else math.ceil(N / AUTO_RECORDS)


def trace_header(T):
    inner = [f"inner_err_{i}" for i in range(1, T + 1)]
    return ["k", "V", "sqrtV", "merit", "grad_err"] + inner + ["step_norm", "calls_value", "calls_jac"]


def trace_row(rec):
    return [rec.k, rec.V, rec.sqrtV, rec.merit, rec.grad_err, *rec.inner_errs,
            rec.step_norm, rec.calls_value, rec.calls_jac]


def thinned(trace, N, cadence, R):
    """Records k = 1, 1 + c, 1 + 2c, ... <= N, plus the record at R."""
    return [rec for rec in trace if rec.k >= 1 and ((rec.k - 1) % cadence == 0 or rec.k == R)]


def metric_values(rec):
    return {
        "V": rec.V,
        "sqrtV": rec.sqrtV,
        "grad_err": rec.grad_err,
        "grad_err_sq": rec.grad_err**2,
        "max_inner_err_sq": rec.max_inner_err_sq,
        **{f"inner_err_{i}": e for i, e in enumerate(rec.inner_errs, start=1)},
    }


@dataclass
class Replication:
    variant: str
    N: int
    rep: int
    R: int = 0
    at_R: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    calls_value: int = 0
    calls_jac: int = 0
    rows: list = field(default_factory=list)
    error: str = None

    @property
    def failed(self):
        return self.error is not None


def run_replication(problem, variant, N, rep, seed, cadence=0, keep_rows=True):
    """One seeded run with full diagnostics; numeric failures are captured."""
    profile = profile_of(problem)
    params = params_for(variant, profile)
    schedule = default_schedule(N, variant, profile)
    out = Replication(variant, N, rep)
    try:
        result = run(RunConfig(variant, params, schedule, seed=seed, replication=rep),
                     problem, recorder_for(problem, params))
    except NumericError as exc:
        out.error = f"{exc} (iteration {exc.iteration})"
        return out
    trace = result.trace
    weights = schedule.output_weights()
    per_k = [metric_values(rec) for rec in trace[1:]]
    out.R = result.R
    out.at_R = metric_values(trace[result.R])
    out.expected = {m: float(np.dot(weights, [v[m] for v in per_k])) for m in per_k[0]}
    out.calls_value = result.calls_value
    out.calls_jac = result.calls_jac
    if keep_rows:
        out.rows = [trace_row(rec) for rec in thinned(trace, N, resolve_cadence(N, cadence), result.R)]
    return out


def _task(args):
    return run_replication(*args)


def replicate(problem, variant, N, reps, seed, cadence=0, workers=1, keep_rows=True):
    """``reps`` replications in order; a process pool is used when ``workers > 1``."""
    tasks = [(problem, variant, N, rep, seed, cadence, keep_rows) for rep in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_task, tasks))
    return [_task(t) for t in tasks]


def _mean_se(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return None, None
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size >= 2 else None
    return mean, se


@dataclass
class CellSummary:
    variant: str
    N: int
    reps: int
    failed: int
    at_R: dict
    expected: dict
    calls_value: int
    calls_jac: int


def summarize_cell(reps):
    ok = [r for r in reps if not r.failed]
    keys = sorted(ok[0].at_R) if ok else []
    at_R = {k: dict(zip(("mean", "se"), _mean_se([r.at_R[k] for r in ok]))) for k in keys}
    expected = {k: dict(zip(("mean", "se"), _mean_se([r.expected[k] for r in ok]))) for k in keys}
    return CellSummary(
        reps[0].variant, reps[0].N, len(reps), len(reps) - len(ok), at_R, expected,
        sum(r.calls_value for r in ok), sum(r.calls_jac for r in ok),
    )


@dataclass
class SweepSummary:
    cells: list
    fits: dict
    trace_files: list = field(default_factory=list)

    @property
    def failed(self):
        return sum(c.failed for c in self.cells)

    def to_dict(self):
        return {
            "cells": [asdict(c) for c in self.cells],
            "fits": self.fits,
            "failed_replications": self.failed,
        }

    def to_json(self):
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_text(self):
        lines = []
        for c in self.cells:
            lines.append(f"[{c.variant} N={c.N}] reps={c.reps} failed={c.failed} "
                         f"value_calls={c.calls_value} jacobian_calls={c.calls_jac}")
            for name in METRICS:
                if name not in c.expected:
                    continue
                e, s = c.expected[name], c.at_R[name]
                lines.append(f"  {name:<17} E_R mean={_fmt(e['mean'])} se={_fmt(e['se'])}"
                             f"  at R mean={_fmt(s['mean'])} se={_fmt(s['se'])}")
        for variant, fits in self.fits.items():
            for metric, fit in fits.items():
                if fit is None:
                    lines.append(f"fit {variant} {metric}: unavailable")
                else:
                    lines.append(f"fit {variant} {metric}: slope={fit['slope']:.4f} "
                                 f"+/- {fit['half_width']:.4f} intercept={fit['intercept']:.4f}")
        lines.append(f"failed replications: {self.failed}")
        return "\n".join(lines) + "\n"


def _finite(obj):
    """Non-finite floats become ``None`` so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(v):
    return "n/a" if v is None else f"{v:.6e}"


def fit_cells(cells, metric, source="expected"):
    grid = [c.N for c in cells]
    means = [getattr(c, source)[metric]["mean"] if metric in getattr(c, source) else float("nan")
             for c in cells]
    means = [float("nan") if m is None else m for m in means]
    return fit_rate(grid, means)


def _fits_for(cells):
    if len(cells) < 3:
        return {"V": None}
    out = {}
    for name, metric, source in (("V", "V", "expected"), ("grad_err_sq", "grad_err_sq", "expected"),
                                 ("max_inner_err_sq", "max_inner_err_sq", "expected"),
                                 ("V_at_R", "V", "at_R")):
        try:
            fit = fit_cells(cells, metric, source)
        except ConfigurationError:
            out[name] = None
            continue
        out[name] = {"slope": fit.slope, "intercept": fit.intercept,
                     "half_width": fit.half_width, "excluded": list(fit.excluded)}
    return out


def write_trace(path, T, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(T))
    writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def run_sweep(config, problem=None, write=True):
    """Every (variant, N, replication) of ``config``; returns a :class:`SweepSummary`.

    With ``write`` set, traces go to ``<out_dir>/traces`` and the summary to
    ``summary.txt`` and ``summary.json`` under ``out_dir``.
    """
    problem = build_problem(config) if problem is None else problem
    if write:
        try:
            os.makedirs(os.path.join(config.out_dir, "traces"), exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"output directory {config.out_dir!r} is not writable: {exc}") from exc
    cells, fits, files = [], {}, []
    for variant in config.variants:
        mine = []
        for N in config.N_grid:
            reps = replicate(problem, variant, N, config.reps, config.seed, config.cadence,
                             config.workers, keep_rows=write)
            if write:
                for r in reps:
                    if r.failed:
                        continue
                    path = os.path.join(config.out_dir, "traces", f"{variant}_N{N}_rep{r.rep}.csv")
                    write_trace(path, problem.T, r.rows)
                    files.append(path)
            mine.append(summarize_cell(reps))
        cells.extend(mine)
        fits[variant] = _fits_for(mine)
    summary = SweepSummary(cells, fits, files)
    if write:
        with open(os.path.join(config.out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summary.to_text())
        with open(os.path.join(config.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            fh.write(summary.to_json())
    return summary
