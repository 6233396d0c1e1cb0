"""Problem data model, stochastic oracle and feasible-set projections.

A problem is the composition ``F(x) = f_1(f_2(...f_T(x)))`` with
``f_i: R^{d_i} -> R^{d_{i-1}}`` and ``d_0 = 1``. Jacobians are stored
transposed: ``jacobian_transpose(y)`` has shape ``(d_i, d_{i-1})`` so that
``grad F(x) = J_T(y_T) J_{T-1}(y_{T-1}) ... J_1(y_1)`` with ``y_T = x``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError
from .rng import KIND_G, KIND_J, SeedTree

TANH_CURVATURE = 4.0 / (3.0 * np.sqrt(3.0))  # max |tanh''|
SIGMOID_SLOPE = 0.25  # max sigma'
SIGMOID_CURVATURE = 1.0 / (6.0 * np.sqrt(3.0))  # max |sigma''|


def spectral_norm(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


# ---------------------------------------------------------------------------
# Level maps
# ---------------------------------------------------------------------------


class LevelMap:
    """One smooth layer ``f_i`` with exact value, Jacobian and constants.

    Subclasses implement ``value`` and ``jacobian_transpose``. Levels whose
    value is an average over a finite support also implement
    ``draw_values`` / ``draw_jacobian`` to subsample that support.
    """

    kind = "generic"
    finite_support = False

    def __init__(self, in_dim, out_dim, lip_value, lip_grad):
        if in_dim < 1 or out_dim < 1:
            raise ConfigurationError("level dimensions must be positive")
        if lip_value < 0 or lip_grad < 0:
            raise ConfigurationError("Lipschitz constants must be nonnegative")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.lip_value = float(lip_value)
        self.lip_grad = float(lip_grad)
        self.index = None

    def value(self, y):
        raise NotImplementedError

    def jacobian_transpose(self, y):
        raise NotImplementedError

    def draw_values(self, y, gen, n):
        raise NotImplementedError

    def draw_jacobian(self, y, gen):
        raise NotImplementedError

    def sample_domain(self, gen, n):
        """Points of the region on which the declared constants hold."""
        return gen.uniform(-3.0, 3.0, size=(n, self.in_dim))

    def arrays(self):
        """Named arrays that fully describe the level (for serialization)."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.in_dim}->{self.out_dim})"


class AffineLevel(LevelMap):
    kind = "affine"

    def __init__(self, matrix, offset=None):
        M = np.ascontiguousarray(np.atleast_2d(np.asarray(matrix, dtype=float)))
        self.matrix = M
        self.offset = np.zeros(M.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        super().__init__(M.shape[1], M.shape[0], spectral_norm(M), 0.0)

    def value(self, y):
        return self.matrix @ y + self.offset

    def jacobian_transpose(self, y):
        return self.matrix.T.copy()

    def arrays(self):
        return {"matrix": self.matrix, "offset": self.offset}


class PseudoHuberLevel(LevelMap):
    """Scalar head ``sum_j sqrt(1 + (y_j - c_j)^2) - 1``.

    The gradient has entries in (-1, 1), so its norm is below sqrt(d); the
    Hessian is diagonal with entries in (0, 1].
    """

    kind = "pseudo_huber"

    def __init__(self, center):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        d = self.center.shape[0]
        super().__init__(d, 1, np.sqrt(d), 1.0)

    def value(self, y):
        r = y - self.center
        return np.array([np.sum(np.sqrt(1.0 + r * r) - 1.0)])

    def jacobian_transpose(self, y):
        r = y - self.center
        return (r / np.sqrt(1.0 + r * r))[:, None]

    def arrays(self):
        return {"center": self.center}


class TanhLayer(LevelMap):
    """``f(y) = W tanh(y)``."""

    kind = "tanh"

    def __init__(self, weight):
        W = np.ascontiguousarray(np.atleast_2d(np.asarray(weight, dtype=float)))
        self.weight = W
        L = spectral_norm(W)
        super().__init__(W.shape[1], W.shape[0], L, L * TANH_CURVATURE)

    def value(self, y):
        return self.weight @ np.tanh(y)

    def jacobian_transpose(self, y):
        t = np.tanh(y)
        return (1.0 - t * t)[:, None] * self.weight.T

    def arrays(self):
        return {"weight": self.weight}


class SigmoidAverageLayer(LevelMap):
    """``[f(y)]_j = mean_s sigmoid(g_{j,s} . y - b_{j,s})`` over m stored pairs.

    ``weights`` has shape (out, m, in), ``biases`` shape (out, m). The oracle
    draws one support index per output component.
    """

    kind = "sigmoid_average"
    finite_support = True

    def __init__(self, weights, biases):
        self.weights = np.ascontiguousarray(weights, dtype=float)
        self.biases = np.ascontiguousarray(biases, dtype=float)
        out_dim, m, in_dim = self.weights.shape
        if self.biases.shape != (out_dim, m):
            raise ConfigurationError("bias shape must be (out, m)")
        norms = np.linalg.norm(self.weights, axis=2)
        lip_value = SIGMOID_SLOPE * np.sqrt(np.sum(norms.mean(axis=1) ** 2))
        lip_grad = SIGMOID_CURVATURE * np.sqrt(np.sum((norms**2).mean(axis=1) ** 2))
        super().__init__(in_dim, out_dim, lip_value, lip_grad)

    @property
    def support_size(self):
        return self.weights.shape[1]

    def _pre(self, y):
        return np.einsum("jsk,k->js", self.weights, y) - self.biases

    def value(self, y):
        return sigmoid(self._pre(y)).mean(axis=1)

    def jacobian_transpose(self, y):
        s = sigmoid(self._pre(y))
        slope = s * (1.0 - s)
        return np.einsum("js,jsk->kj", slope, self.weights) / self.support_size

    def _pick(self, gen, n):
        return gen.integers(0, self.support_size, size=(n, self.out_dim))

    def value_variance(self, y):
        """Exact per-coordinate variance of one subsampled value draw."""
        s = sigmoid(self._pre(y))
        return ((s - s.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)

    def draw_values(self, y, gen, n):
        idx = self._pick(gen, n)
        rows = np.arange(self.out_dim)
        g = self.weights[rows[None, :], idx]  # (n, out, in)
        b = self.biases[rows[None, :], idx]
        return sigmoid(np.einsum("njk,k->nj", g, y) - b)

    def draw_jacobian(self, y, gen):
        idx = self._pick(gen, 1)[0]
        rows = np.arange(self.out_dim)
        g = self.weights[rows, idx]  # (out, in)
        s = sigmoid(g @ y - self.biases[rows, idx])
        return (g * (s * (1.0 - s))[:, None]).T

    def arrays(self):
        return {"weights": self.weights, "biases": self.biases}


class SquaredResidualLevel(LevelMap):
    """Scalar measurement loss ``mean_l (y_l - a_l . x)^2``.

    The gradient grows linearly in ``x``, so the value constant is declared
    for inputs with norm at most ``region_radius``; the gradient constant is
    global. The oracle draws one measurement uniformly.
    """

    kind = "squared_residual"
    finite_support = True

    def __init__(self, sensing, measurements, region_radius):
        self.sensing = np.ascontiguousarray(np.atleast_2d(np.asarray(sensing, dtype=float)))
        self.measurements = np.asarray(measurements, dtype=float)
        self.region_radius = float(region_radius)
        n, d = self.sensing.shape
        A2 = spectral_norm(self.sensing)
        y_norm = float(np.linalg.norm(self.measurements))
        lip_value = 2.0 / n * A2 * (A2 * self.region_radius + y_norm)
        super().__init__(d, 1, lip_value, 2.0 * A2 * A2 / n)

    @property
    def support_size(self):
        return self.sensing.shape[0]

    def value(self, x):
        r = self.measurements - self.sensing @ x
        return np.array([np.mean(r * r)])

    def jacobian_transpose(self, x):
        r = self.measurements - self.sensing @ x
        return (-2.0 / self.support_size * (self.sensing.T @ r))[:, None]

    def value_variance(self, x):
        r2 = (self.measurements - self.sensing @ x) ** 2
        return np.array([np.mean((r2 - r2.mean()) ** 2)])

    def draw_values(self, x, gen, n):
        idx = gen.integers(0, self.support_size, size=n)
        r = self.measurements[idx] - self.sensing[idx] @ x
        return (r * r)[:, None]

    def draw_jacobian(self, x, gen):
        l = gen.integers(0, self.support_size)
        r = self.measurements[l] - self.sensing[l] @ x
        return (-2.0 * r * self.sensing[l])[:, None]

    def sample_domain(self, gen, n):
        # box [-0.5, 1.5]^d lies inside the declared radius 2 sqrt(d) region
        pts = gen.uniform(-0.5, 1.5, size=(n, self.in_dim))
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        scale = np.minimum(1.0, self.region_radius / np.maximum(norms, 1e-300))
        return pts * scale

    def arrays(self):
        return {
            "sensing": self.sensing,
            "measurements": self.measurements,
            "region_radius": np.array([self.region_radius]),
        }


class CallableLevel(LevelMap):
    """Level defined by user callables; not serializable."""

    kind = "callable"

    def __init__(self, value_fn, jacobian_fn, in_dim, out_dim, lip_value, lip_grad):
        self._value = value_fn
        self._jac = jacobian_fn
        super().__init__(in_dim, out_dim, lip_value, lip_grad)

    def value(self, y):
        return np.atleast_1d(np.asarray(self._value(y), dtype=float))

    def jacobian_transpose(self, y):
        return np.asarray(self._jac(y), dtype=float).reshape(self.in_dim, self.out_dim)

    def arrays(self):
        raise ConfigurationError("callable levels cannot be serialized")


LEVEL_KINDS = {
    "affine": lambda a: AffineLevel(a["matrix"], a["offset"]),
    "pseudo_huber": lambda a: PseudoHuberLevel(a["center"]),
    "tanh": lambda a: TanhLayer(a["weight"]),
    "sigmoid_average": lambda a: SigmoidAverageLayer(a["weights"], a["biases"]),
    "squared_residual": lambda a: SquaredResidualLevel(
        a["sensing"], a["measurements"], float(a["region_radius"][0])
    ),
}


# ---------------------------------------------------------------------------
# Feasible sets
# ---------------------------------------------------------------------------


class FeasibleSet:
    kind = "abstract"

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, p):
        raise NotImplementedError

    def contains(self, p, tol=1e-12):
        return bool(np.linalg.norm(self.project(p) - p) <= tol)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim}


class FullSpace(FeasibleSet):
    kind = "full"

    def project(self, p):
        return np.array(p, dtype=float)


class Box(FeasibleSet):
    kind = "box"

    def __init__(self, lower, upper, dim=None):
        if dim is not None:
            lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
            upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
        self.lower = np.array(lower, dtype=float)
        self.upper = np.array(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ConfigurationError("box bounds must be vectors of equal length")
        if np.any(self.lower > self.upper):
            raise ConfigurationError("box lower bound exceeds upper bound")
        super().__init__(self.lower.shape[0])

    def project(self, p):
        return kernels.project_box(np.asarray(p, dtype=float), self.lower, self.upper)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class EuclideanBall(FeasibleSet):
    kind = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ConfigurationError("ball radius must be positive")
        self.radius = float(radius)
        super().__init__(self.center.shape[0])

    def project(self, p):
        return kernels.project_ball(np.asarray(p, dtype=float), self.center, self.radius)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "center": self.center.tolist(), "radius": self.radius}


def feasible_set_from_dict(d):
    kind = d["kind"]
    if kind == "full":
        return FullSpace(d["dim"])
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "ball":
        return EuclideanBall(d["center"], d["radius"])
    raise ConfigurationError(f"unknown feasible set kind {kind!r}")


def project(feasible_set, p):
    """Euclidean projection of ``p`` onto ``feasible_set``."""
    return feasible_set.project(p)


def solve_prox_subproblem(x, z, beta, feasible_set):
    """argmin over the set of ``<z, y - x> + (beta/2)||y - x||^2``."""
    if not beta > 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    return feasible_set.project(x - z / beta)


# ---------------------------------------------------------------------------
# Noise model and problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Additive zero-mean Gaussian oracle noise, sized by norm.

    ``sigma_G`` is the RMS Euclidean norm of the value noise and ``sigma_J``
    the RMS Frobenius norm of the Jacobian noise, so ``E||G - f||^2 =
    sigma_G^2``; entries are iid with the matching per-entry deviation.
    ``subsample`` makes finite-support levels draw from their support
    instead of returning the exact average.
    """

    sigma_G: float = 0.0
    sigma_J: float = 0.0
    subsample: bool = False

    def __post_init__(self):
        if self.sigma_G < 0 or self.sigma_J < 0:
            raise ConfigurationError("noise scales must be nonnegative")

    def value_std(self, level):
        return self.sigma_G / np.sqrt(level.out_dim)

    def jacobian_std(self, level):
        return self.sigma_J / np.sqrt(level.in_dim * level.out_dim)

    def jacobian_second_moment_bound(self, level):
        """Bound on E||J||_F^2; the Frobenius norm bounds the spectral norm."""
        return min(level.in_dim, level.out_dim) * level.lip_value**2 + self.sigma_J**2


@dataclass(frozen=True)
class OracleSample:
    level: int
    G: np.ndarray
    J: np.ndarray


@dataclass
class CompositionProblem:
    levels: tuple
    feasible_set: FeasibleSet
    lower_bound: float = None
    noise: tuple = None
    family: str = "custom"
    meta: dict = field(default_factory=dict)
    minimizer: np.ndarray = None

    def __post_init__(self):
        self.levels = tuple(self.levels)
        if not self.levels:
            raise ConfigurationError("a problem needs at least one level")
        if self.levels[0].out_dim != 1:
            raise ConfigurationError("the outermost level must be scalar valued (d_0 = 1)")
        for i in range(1, len(self.levels)):
            if self.levels[i].out_dim != self.levels[i - 1].in_dim:
                raise ConfigurationError(
                    f"level {i + 1} outputs {self.levels[i].out_dim} values but level {i} "
                    f"expects {self.levels[i - 1].in_dim}"
                )
        for i, lv in enumerate(self.levels):
            lv.index = i + 1
        if self.feasible_set.dim != self.dim:
            raise ConfigurationError(
                f"feasible set has dimension {self.feasible_set.dim}, expected {self.dim}"
            )
        if self.noise is None:
            self.noise = tuple(NoiseSpec() for _ in self.levels)
        self.noise = tuple(self.noise)
        if len(self.noise) != self.T:
            raise ConfigurationError("one NoiseSpec per level is required")

    @property
    def T(self):
        return len(self.levels)

    @property
    def dim(self):
        return self.levels[-1].in_dim

    @property
    def dims(self):
        """(d_0, d_1, ..., d_T)."""
        return (1,) + tuple(lv.in_dim for lv in self.levels)

    def level(self, i):
        """Level ``f_i`` for 1-based ``i``."""
        if not 1 <= i <= self.T:
            raise ConfigurationError(f"level index {i} outside 1..{self.T}")
        return self.levels[i - 1]

    @property
    def lip_values(self):
        return [lv.lip_value for lv in self.levels]

    @property
    def lip_grads(self):
        return [lv.lip_grad for lv in self.levels]

    def value(self, x):
        return evaluate_truth(self, x).value

    def with_noise(self, noise):
        """Copy of the problem with a different noise specification."""
        if isinstance(noise, NoiseSpec):
            noise = tuple(noise for _ in self.levels)
        return CompositionProblem(
            self.levels, self.feasible_set, self.lower_bound, tuple(noise),
            self.family, dict(self.meta), self.minimizer,
        )

    def with_feasible_set(self, feasible_set, lower_bound=None):
        return CompositionProblem(
            self.levels, feasible_set, lower_bound, self.noise,
            self.family, dict(self.meta), None,
        )


@dataclass(frozen=True)
class TruthEval:
    value: float
    grad: np.ndarray
    level_inputs: tuple  # level_inputs[i - 1] = y_i = f_{i+1}(...f_T(x)), y_T = x


def _check_finite(arr, what, level):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} at level {level}", level=level)


def evaluate_truth(problem, x):
    """Exact F(x), grad F(x) and the inputs y_T, ..., y_1 of every level."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise ConfigurationError(f"point has shape {x.shape}, expected ({problem.dim},)")
    _check_finite(x, "point", problem.T)
    inputs = [None] * problem.T
    y = x
    for i in range(problem.T, 0, -1):
        inputs[i - 1] = y
        if i > 1:
            y = problem.level(i).value(y)
            _check_finite(y, "value", i)
    value = problem.level(1).value(inputs[0])
    _check_finite(value, "value", 1)
    g = problem.level(1).jacobian_transpose(inputs[0])[:, 0]
    for i in range(2, problem.T + 1):
        g = problem.level(i).jacobian_transpose(inputs[i - 1]) @ g
        _check_finite(g, "gradient", i)
    return TruthEval(float(value[0]), g, tuple(inputs))


# ---------------------------------------------------------------------------
# Stochastic oracle
# ---------------------------------------------------------------------------


def _generators(rng):
    if isinstance(rng, SeedTree):
        return rng.child(KIND_G).generator(), rng.child(KIND_J).generator()
    return rng, rng


def draw_values(problem, i, query, gen, n=1):
    """``n`` independent noisy values of ``f_i(query)``, shape (n, d_{i-1})."""
    level = problem.level(i)
    noise = problem.noise[i - 1]
    query = np.asarray(query, dtype=float)
    if query.shape != (level.in_dim,):
        raise ConfigurationError(f"level {i} query has shape {query.shape}, expected ({level.in_dim},)")
    if noise.subsample and level.finite_support:
        rows = level.draw_values(query, gen, n)
    else:
        rows = np.broadcast_to(level.value(query), (n, level.out_dim)).copy()
    if noise.sigma_G > 0:
        rows = rows + noise.value_std(level) * gen.standard_normal((n, level.out_dim))
    return rows


def draw_jacobian(problem, i, query, gen):
    """One noisy transposed Jacobian of ``f_i`` at ``query``, shape (d_i, d_{i-1})."""
    level = problem.level(i)
    noise = problem.noise[i - 1]
    query = np.asarray(query, dtype=float)
    if query.shape != (level.in_dim,):
        raise ConfigurationError(f"level {i} query has shape {query.shape}, expected ({level.in_dim},)")
    if noise.subsample and level.finite_support:
        J = level.draw_jacobian(query, gen)
    else:
        J = level.jacobian_transpose(query)
    if noise.sigma_J > 0:
        J = J + noise.jacobian_std(level) * gen.standard_normal((level.in_dim, level.out_dim))
    return J


def sample_oracle(problem, i, query, rng):
    """One (G, J) draw for level ``i``.

    ``rng`` is either a :class:`SeedTree` node (G and J then come from the
    node's dedicated G and J streams) or a numpy Generator used for both.
    """
    gen_g, gen_j = _generators(rng)
    G = draw_values(problem, i, query, gen_g, 1)[0]
    J = draw_jacobian(problem, i, query, gen_j)
    return OracleSample(i, G, J)
