"""Stationarity and merit diagnostics computed from exact problem truth.

None of these functions call the stochastic oracle.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import evaluate_truth, solve_prox_subproblem
from .errors import ConfigurationError, UnsupportedDiagnostic


def eta_value(x, z, beta, feasible_set):
    """min over y in X of ``<z, y - x> + (beta/2)||y - x||^2`` (always <= 0)."""
    y = solve_prox_subproblem(x, z, beta, feasible_set)
    d = y - x
    return min(0.0, float(z @ d + 0.5 * beta * (d @ d)))


def stationarity_V(problem, x, z, truth=None):
    """``||u - x||^2 + ||z - grad F(x)||^2`` with u from the unit-step subproblem."""
    truth = evaluate_truth(problem, x) if truth is None else truth
    u = problem.feasible_set.project(x - z)
    du = u - x
    dz = z - truth.grad
    return float(du @ du + dz @ dz)


def merit_W(problem, params, x, z, w, truth=None):
    """F(x) - F* - eta(x, z) + sum_i gamma_i ||f_i(w_{i+1}) - w_i||^2, w_{T+1} = x."""
    if problem.lower_bound is None:
        raise UnsupportedDiagnostic(f"{problem.family} has no known optimal value")
    truth = evaluate_truth(problem, x) if truth is None else truth
    total = truth.value - problem.lower_bound - eta_value(x, z, params.beta, problem.feasible_set)
    for i, e in enumerate(inner_errors(problem, x, w), start=1):
        total += params.gamma[i - 1] * e * e
    return float(total)


def inner_errors(problem, x, w):
    """``||f_i(w_{i+1}) - w_i||`` for i = 1..T."""
    T = problem.T
    out = []
    for i in range(1, T + 1):
        arg = x if i == T else w[i]
        r = problem.level(i).value(arg) - w[i - 1]
        out.append(float(np.sqrt(r @ r)))
    return out


@dataclass(frozen=True)
class IterationRecord:
    k: int
    V: float
    merit: float
    grad_err: float
    inner_errs: tuple
    step_norm: float
    calls_value: int
    calls_jac: int

    @property
    def sqrtV(self):
        return math.sqrt(self.V)

    @property
    def max_inner_err_sq(self):
        return max(e * e for e in self.inner_errs)


def record_iteration(state, problem, params):
    """Snapshot of every diagnostic at ``state``; merit is NaN when F* is unknown."""
    truth = evaluate_truth(problem, state.x)
    V = stationarity_V(problem, state.x, state.z, truth)
    try:
        merit = merit_W(problem, params, state.x, state.z, state.w, truth)
    except UnsupportedDiagnostic:
        merit = float("nan")
    u = solve_prox_subproblem(state.x, state.z, params.beta, problem.feasible_set)
    dz = truth.grad - state.z
    return IterationRecord(
        k=state.k,
        V=V,
        merit=merit,
        grad_err=float(np.sqrt(dz @ dz)),
        inner_errs=tuple(inner_errors(problem, state.x, state.w)),
        step_norm=float(np.linalg.norm(u - state.x)),
        calls_value=state.calls_value,
        calls_jac=state.calls_jac,
    )


def recorder_for(problem, params):
    return lambda state: record_iteration(state, problem, params)


@dataclass(frozen=True)
class RateFit:
    grid: tuple
    means: tuple
    slope: float
    intercept: float
    half_width: float
    excluded: tuple = ()

    def within(self, lo, hi):
        return lo <= self.slope <= hi


def fit_rate(grid, means, confidence=0.95):
    """Least-squares slope of log(mean) against log(N).

    Points with a nonpositive mean are excluded and listed in ``excluded``.
    ``half_width`` is the t-interval half-width of the slope (0 for an exact
    fit, NaN with only two usable points).
    """
    grid = tuple(int(n) for n in grid)
    means = tuple(float(m) for m in means)
    if len(grid) != len(means):
        raise ConfigurationError("grid and means differ in length")
    if len(grid) < 3:
        raise ConfigurationError("a rate fit needs at least 3 grid points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError("grid must be strictly increasing")
    keep = [(n, m) for n, m in zip(grid, means) if m > 0 and math.isfinite(m)]
    excluded = tuple(n for n, m in zip(grid, means) if not (m > 0 and math.isfinite(m)))
    if len(keep) < 2:
        raise ConfigurationError("fewer than two grid points with positive mean")
    lx = np.log([n for n, _ in keep])
    ly = np.log([m for _, m in keep])
    res = stats.linregress(lx, ly)
    dof = len(keep) - 2
    if dof > 0:
        half = float(stats.t.ppf(0.5 + confidence / 2, dof) * res.stderr)
    else:
        half = float("nan")
    return RateFit(grid, means, float(res.slope), float(res.intercept), half, excluded)
