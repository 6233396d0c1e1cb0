"""Nested moving-average solvers and the run driver.

State convention: ``w[i - 1]`` estimates ``f_i(w_{i+1})`` and lives in
``R^{d_{i-1}}``; ``w_{T+1}`` is the iterate ``x`` itself. A step reads only
the old state when it queries the oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import draw_jacobian, draw_values, evaluate_truth, solve_prox_subproblem
from .errors import ConfigurationError, NumericError
from .params import ALG1, ALG2, BASELINE, AlgParams, Schedule
from .rng import KIND_G, KIND_INDEX, KIND_J, SeedTree


@dataclass(frozen=True)
class SolverState:
    k: int
    x: np.ndarray
    z: np.ndarray
    w: tuple
    u: np.ndarray = None
    calls_value: int = 0
    calls_jac: int = 0

    def query(self, i):
        """Oracle query point for level ``i``: w_{i+1}, or x when i = T."""
        return self.x if i == len(self.w) else self.w[i]


@dataclass
class RunConfig:
    variant: str
    params: AlgParams
    schedule: Schedule
    seed: int = 0
    replication: int = 0
    x0: np.ndarray = None
    z0: np.ndarray = None
    w0: tuple = None
    record: bool = True
    cadence: int = 1

    def __post_init__(self):
        if self.variant not in (ALG1, ALG2, BASELINE):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.cadence < 1:
            raise ConfigurationError("cadence must be at least 1")

    @property
    def N(self):
        return self.schedule.N


@dataclass
class RunResult:
    R: int
    state: SolverState
    final: SolverState
    trace: list = field(default_factory=list)
    calls_value: int = 0
    calls_jac: int = 0


def initial_state(problem, x0=None, z0=None, w0=None):
    """x0 projected onto X (default: projection of 0), exact w down the chain, z0 = 0."""
    x = problem.feasible_set.project(np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float))
    z = np.zeros(problem.dim) if z0 is None else np.array(z0, dtype=float)
    if w0 is None:
        truth = evaluate_truth(problem, x)
        ins = truth.level_inputs
        w = tuple(problem.level(i).value(ins[i - 1]) for i in range(1, problem.T + 1))
    else:
        w = tuple(np.array(v, dtype=float) for v in w0)
    for i, v in enumerate(w, start=1):
        if v.shape != (problem.level(i).out_dim,):
            raise ConfigurationError(f"w_{i} has shape {v.shape}, expected ({problem.level(i).out_dim},)")
    if z.shape != (problem.dim,):
        raise ConfigurationError(f"z has shape {z.shape}, expected ({problem.dim},)")
    return SolverState(0, x, z, w)


def _check(state, k):
    arrays = (state.x, state.z) + tuple(state.w)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise NumericError(f"non-finite state after iteration {k}", iteration=k)
    return state


def _average_gradient(z, product, tau):
    return kernels.moving_average(z, product, tau)


def _draw_jacobians(state, problem, rng):
    return [
        draw_jacobian(problem, i, state.query(i), rng.child(i, KIND_J).generator())
        for i in range(1, problem.T + 1)
    ]


def alg1_step(state, problem, params, tau, batch, rng):
    """One iteration of the mini-batch nested averaging method.

    ``rng`` is the :class:`SeedTree` node of this iteration; level ``i`` draws
    its ``batch`` values from ``rng.child(i, KIND_G)`` and its Jacobian from
    ``rng.child(i, KIND_J)``.
    """
    if not 0 < tau <= 1:
        raise ConfigurationError(f"step size {tau} outside (0, 1]")
    if batch < 1:
        raise ConfigurationError("batch size must be at least 1")
    T = problem.T
    u = solve_prox_subproblem(state.x, state.z, params.beta, problem.feasible_set)
    jacs = _draw_jacobians(state, problem, rng)
    gbars = [
        kernels.batch_mean(draw_values(problem, i, state.query(i), rng.child(i, KIND_G).generator(), batch))
        for i in range(1, T + 1)
    ]
    x = kernels.moving_average(state.x, u, tau)
    z = _average_gradient(state.z, kernels.chain_product(jacs), tau)
    w = tuple(kernels.nested_average(state.w, gbars, tau))
    new = SolverState(state.k + 1, x, z, w, u, state.calls_value + T * batch, state.calls_jac + T)
    return _check(new, state.k)


def alg2_step(state, problem, params, tau, rng):
    """One iteration of the linearized nested averaging method (batch 1).

    The level estimates are updated from T down to 1 so each correction
    ``J_i^T (w_{i+1}' - w_{i+1})`` uses the already-updated argument; the
    Jacobian draw is shared with the gradient product.
    """
    if not 0 < tau <= 1:
        raise ConfigurationError(f"step size {tau} outside (0, 1]")
    T = problem.T
    u = solve_prox_subproblem(state.x, state.z, params.beta, problem.feasible_set)
    jacs = _draw_jacobians(state, problem, rng)
    gs = [
        draw_values(problem, i, state.query(i), rng.child(i, KIND_G).generator(), 1)[0]
        for i in range(1, T + 1)
    ]
    x = kernels.moving_average(state.x, u, tau)
    z = _average_gradient(state.z, kernels.chain_product(jacs), tau)
    w = tuple(kernels.linearized_average(state.w, gs, jacs, x - state.x, tau))
    new = SolverState(state.k + 1, x, z, w, u, state.calls_value + T, state.calls_jac + T)
    return _check(new, state.k)


def nested_sgd_baseline_step(state, problem, step_size, rng):
    """Projected SGD with a plug-in gradient through noisy inner values.

    Each level is queried at the noisy output of the level below it (fresh
    draws, no averaging), so the gradient estimate is biased for T >= 2.
    ``z`` stores the gradient estimate and ``w`` the noisy inner values.
    """
    if step_size < 0:
        raise ConfigurationError("step size must be nonnegative")
    T = problem.T
    w = [None] * T
    jacs = [None] * T
    y = state.x
    for i in range(T, 0, -1):
        jacs[i - 1] = draw_jacobian(problem, i, y, rng.child(i, KIND_J).generator())
        y = draw_values(problem, i, y, rng.child(i, KIND_G).generator(), 1)[0]
        w[i - 1] = y
    grad = kernels.chain_product(jacs)
    x = problem.feasible_set.project(state.x - step_size * grad)
    new = SolverState(state.k + 1, x, grad, tuple(w), x, state.calls_value + T, state.calls_jac + T)
    return _check(new, state.k)


def step(variant, state, problem, params, schedule, rng):
    """Dispatch one iteration ``k = state.k`` of ``variant``."""
    k = state.k
    tau = schedule.tau[k]
    if variant == ALG1:
        return alg1_step(state, problem, params, tau, schedule.batch[k], rng)
    if variant == ALG2:
        return alg2_step(state, problem, params, tau, rng)
    if variant == BASELINE:
        return nested_sgd_baseline_step(state, problem, tau / params.beta, rng)
    raise ConfigurationError(f"unknown variant {variant!r}")


def sample_output_index(weights, gen):
    """Draw R in 1..N with P[R = k] = weights[k - 1]."""
    return int(gen.choice(len(weights), p=weights)) + 1


def draw_output_index(schedule, seed, replication=0):
    """The driver's R for ``(seed, replication)``, from its dedicated stream."""
    gen = SeedTree(seed).child(replication, schedule.N, KIND_INDEX).generator()
    return sample_output_index(schedule.output_weights(), gen)


def run(config, problem, recorder=None):
    """Run all N iterations, then draw the reported index R.

    Drawing R after the full horizon gives the same law for the reported
    iterate as stopping at a pre-drawn R. ``recorder(state)`` is called for
    the initial state and every iterate when ``config.record`` is set; its
    outputs form ``RunResult.trace``.
    """
    root = SeedTree(config.seed).child(config.replication)
    state = initial_state(problem, config.x0, config.z0, config.w0)
    if not problem.feasible_set.contains(state.x):
        raise ConfigurationError("initial point is not feasible")
    iterates = [state]
    trace = []
    if recorder is not None and config.record:
        trace.append(recorder(state))
    for k in range(config.N):
        try:
            state = step(config.variant, state, problem, config.params, config.schedule, root.child(k))
        except NumericError as exc:
            exc.iteration = k
            raise
        iterates.append(state)
        if recorder is not None and config.record:
            trace.append(recorder(state))
    R = draw_output_index(config.schedule, config.seed, config.replication)
    return RunResult(R, iterates[R], state, trace, state.calls_value, state.calls_jac)
