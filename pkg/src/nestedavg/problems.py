"""Synthetic multi-level problems with exact ground truth.

Families
--------
quadratic_free_chain
    Affine inner levels ``A_i y + b_i`` under a pseudo-Huber head. Convex, so
    the optimal value is computed at generation.
tanh_chain
    ``f_i(y) = W_i tanh(y)`` with spectrally normalized weights. Nonconvex;
    the optimal value is unknown.
generative_recovery
    A sigmoid generator whose layers are finite averages over stored
    ``(g, b)`` pairs, followed by a squared-residual measurement level. The
    planted latent is a global minimizer with value 0 when the measurements
    are noise free.

Dimension lists are given input first: ``dims = (d_T, ..., d_1)``; a trailing
``d_0 = 1`` may be included.
"""

import json

import numpy as np

from .core import (
    LEVEL_KINDS,
    AffineLevel,
    Box,
    CompositionProblem,
    EuclideanBall,
    FullSpace,
    NoiseSpec,
    PseudoHuberLevel,
    SigmoidAverageLayer,
    SquaredResidualLevel,
    TanhLayer,
    evaluate_truth,
    feasible_set_from_dict,
    spectral_norm,
)
from .errors import ConfigurationError

FAMILIES = ("quadratic_free_chain", "tanh_chain", "generative_recovery")
FORMAT_TAG = "nestedavg-problem/1"


def _chain_dims(T, dims):
    dims = [int(d) for d in dims]
    if len(dims) == T + 1:
        if dims[-1] != 1:
            raise ConfigurationError("the last dimension d_0 must be 1")
        dims = dims[:-1]
    if len(dims) != T:
        raise ConfigurationError(f"expected {T} dimensions (d_T..d_1), got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ConfigurationError("dimensions must be positive")
    # return d_0..d_T
    return [1] + dims[::-1]


def _isometry(gen, rows, cols):
    """Random matrix whose singular values are all 1."""
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(gen.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _noise_tuple(noise, T):
    if noise is None:
        return tuple(NoiseSpec() for _ in range(T))
    if isinstance(noise, NoiseSpec):
        return tuple(noise for _ in range(T))
    noise = tuple(noise)
    if len(noise) != T:
        raise ConfigurationError("one NoiseSpec per level is required")
    return noise


# ---------------------------------------------------------------------------
# quadratic-free chain
# ---------------------------------------------------------------------------


def make_quadratic_free_chain(T, dims, seed, feasible_set=None, noise=None,
                              matrices=None, offsets=None, center=None):
    """Pseudo-Huber head over an affine chain.

    ``matrices``/``offsets`` override the random inner levels (ordered f_2..f_T)
    and ``center`` the head's center.
    """
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    d = _chain_dims(T, dims)
    gen = np.random.default_rng(seed)
    if center is None:
        center = 0.5 * gen.standard_normal(d[1])
    levels = [PseudoHuberLevel(center)]
    for i in range(2, T + 1):
        M = _isometry(gen, d[i - 1], d[i]) if matrices is None else np.asarray(matrices[i - 2], dtype=float)
        b = 0.1 * gen.standard_normal(d[i - 1]) if offsets is None else np.asarray(offsets[i - 2], dtype=float)
        if M.shape != (d[i - 1], d[i]):
            raise ConfigurationError(f"level {i} matrix has shape {M.shape}, expected {(d[i - 1], d[i])}")
        levels.append(AffineLevel(M, b))
    fs = FullSpace(d[T]) if feasible_set is None else feasible_set
    meta = {"T": T, "dims": d[:0:-1], "seed": seed}
    problem = CompositionProblem(levels, fs, None, _noise_tuple(noise, T), "quadratic_free_chain", meta)
    fstar, xstar = quadratic_chain_optimum(problem)
    problem.lower_bound = fstar
    problem.minimizer = xstar
    return problem


def _affine_composite(problem):
    """(M, m) with f_2(...f_T(x)) = M x + m."""
    M = np.eye(problem.dim)
    m = np.zeros(problem.dim)
    for i in range(problem.T, 1, -1):
        lv = problem.level(i)
        M = lv.matrix @ M
        m = lv.matrix @ m + lv.offset
    return M, m


def quadratic_chain_optimum(problem, tol=1e-13, max_iter=200000):
    """Optimal value and a minimizer of a quadratic-free chain over its set."""
    M, m = _affine_composite(problem)
    c = problem.level(1).center
    fs = problem.feasible_set
    if isinstance(fs, FullSpace) and np.linalg.matrix_rank(M) == M.shape[0]:
        x = np.linalg.lstsq(M, c - m, rcond=None)[0]
        return 0.0, x
    return _accelerated_projected_descent(problem, M, m, c, tol, max_iter)


def _accelerated_projected_descent(problem, M, m, c, tol, max_iter):
    L = max(spectral_norm(M) ** 2, 1e-12)
    fs = problem.feasible_set

    def grad(x):
        r = M @ x + m - c
        return M.T @ (r / np.sqrt(1.0 + r * r))

    def val(x):
        r = M @ x + m - c
        return float(np.sum(np.sqrt(1.0 + r * r) - 1.0))

    x = fs.project(np.zeros(problem.dim))
    y, t = x.copy(), 1.0
    for _ in range(max_iter):
        x_new = fs.project(y - grad(y) / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        if val(x_new) > val(x):  # adaptive restart
            y, t_new = x_new.copy(), 1.0
        step = np.linalg.norm(x_new - x)
        x, t = x_new, t_new
        if step * L < tol:
            break
    return val(x), x


# ---------------------------------------------------------------------------
# tanh chain
# ---------------------------------------------------------------------------


def make_tanh_chain(T, dims, seed, feasible_set=None, noise=None, weights=None, gain=1.0):
    """``f_i(y) = W_i tanh(y)`` with each ``W_i`` scaled to spectral norm ``gain``."""
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    d = _chain_dims(T, dims)
    gen = np.random.default_rng(seed)
    levels = []
    for i in range(1, T + 1):
        if weights is None:
            W = gen.standard_normal((d[i - 1], d[i]))
            W *= gain / spectral_norm(W)
        else:
            W = np.asarray(weights[i - 1], dtype=float)
            if W.shape != (d[i - 1], d[i]):
                raise ConfigurationError(f"W_{i} has shape {W.shape}, expected {(d[i - 1], d[i])}")
        levels.append(TanhLayer(W))
    fs = FullSpace(d[T]) if feasible_set is None else feasible_set
    meta = {"T": T, "dims": d[:0:-1], "seed": seed}
    return CompositionProblem(levels, fs, None, _noise_tuple(noise, T), "tanh_chain", meta)


# ---------------------------------------------------------------------------
# generative recovery
# ---------------------------------------------------------------------------


def make_generative_recovery(k_latent, d_signal, depth, seed, support=8, n_measurements=None,
                             hidden=None, measurement_noise=0.0, gain=4.0, spread=0.1,
                             stochastic=True, feasible_set=None):
    """Recover a planted latent through a sigmoid generator.

    The chain has ``depth + 1`` levels: the measurement loss ``f_1`` over
    ``n_measurements`` stored pairs, then ``depth`` generator layers from the
    signal back to the latent. Each generator component averages ``support``
    sigmoid units; mean weights are scaled to spectral norm ``gain`` (4 keeps
    each layer's Lipschitz constant near 1). ``stochastic=False`` gives an
    exact (noise-free) oracle.
    """
    if depth < 1:
        raise ConfigurationError("depth must be at least 1")
    if not k_latent < d_signal:
        raise ConfigurationError("the latent dimension must be below the signal dimension")
    gen = np.random.default_rng(seed)
    if hidden is None:
        hidden = [int(round(k_latent * (d_signal / k_latent) ** (l / depth))) for l in range(1, depth)]
    widths = [k_latent] + list(hidden) + [d_signal]  # data flow order
    if len(widths) != depth + 1:
        raise ConfigurationError("hidden widths must have depth - 1 entries")
    layers = []
    for l in range(depth):
        n_in, n_out = widths[l], widths[l + 1]
        mean = gen.standard_normal((n_out, n_in))
        mean *= gain / spectral_norm(mean)
        pert = gen.standard_normal((n_out, support, n_in)) * spread * gain / np.sqrt(n_in)
        pert -= pert.mean(axis=1, keepdims=True)
        bias = spread * gen.standard_normal((n_out, support))
        layers.append(SigmoidAverageLayer(mean[:, None, :] + pert, bias))
    n_meas = 2 * d_signal if n_measurements is None else int(n_measurements)
    sensing = gen.standard_normal((n_meas, d_signal))
    z_star = 0.5 * gen.standard_normal(k_latent)
    x_star = z_star
    for layer in layers:
        x_star = layer.value(x_star)
    meas = sensing @ x_star + measurement_noise * gen.standard_normal(n_meas)
    head = SquaredResidualLevel(sensing, meas, region_radius=2.0 * np.sqrt(d_signal))
    levels = [head] + layers[::-1]
    T = depth + 1
    noise = NoiseSpec(subsample=bool(stochastic))
    fs = FullSpace(k_latent) if feasible_set is None else feasible_set
    meta = {"k_latent": k_latent, "d_signal": d_signal, "depth": depth, "seed": seed, "support": support}
    planted = measurement_noise == 0.0 and fs.contains(z_star)
    return CompositionProblem(
        levels, fs, 0.0 if planted else None, _noise_tuple(noise, T), "generative_recovery", meta,
        z_star if planted else None,
    )


def make_problem(family, T=3, dims=None, seed=0, noise_scale=0.0, feasible="full", radius=1.0, **kw):
    """Build a suite instance from flat settings (used by the config layer)."""
    if family == "generative_recovery":
        k, d = (dims or (3, 10))[:2]
        return make_generative_recovery(k, d, T - 1, seed, stochastic=noise_scale > 0, **kw)
    dims = dims or [8] * T
    noise = NoiseSpec(noise_scale, noise_scale)
    d_T = _chain_dims(T, dims)[-1]
    fs = _feasible(feasible, d_T, radius)
    if family == "quadratic_free_chain":
        return make_quadratic_free_chain(T, dims, seed, fs, noise, **kw)
    if family == "tanh_chain":
        return make_tanh_chain(T, dims, seed, fs, noise, **kw)
    raise ConfigurationError(f"unknown problem family {family!r}")


def _feasible(kind, dim, radius):
    if kind == "full":
        return FullSpace(dim)
    if kind == "ball":
        return EuclideanBall(np.zeros(dim), radius)
    if kind == "box":
        return Box(-radius, radius, dim=dim)
    raise ConfigurationError(f"unknown feasible set {kind!r}")


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


def lipschitz_ratios(problem, n_pairs, seed=0, close_scale=1e-3):
    """Largest sampled ratios per level for the value and transposed Jacobian.

    Half of the pairs are independent draws from each level's domain, half are
    close pairs ``(y, y + close_scale * e)`` that probe local slopes.
    Returns ``[(value_ratio, jacobian_ratio), ...]`` for levels 1..T.
    """
    gen = np.random.default_rng(seed)
    out = []
    for lv in problem.levels:
        a = lv.sample_domain(gen, n_pairs)
        b = lv.sample_domain(gen, n_pairs)
        half = n_pairs // 2
        b[:half] = a[:half] + close_scale * gen.standard_normal((half, lv.in_dim))
        dist = np.linalg.norm(a - b, axis=1)
        fa = np.array([lv.value(y) for y in a])
        fb = np.array([lv.value(y) for y in b])
        ja = np.array([lv.jacobian_transpose(y) for y in a])
        jb = np.array([lv.jacobian_transpose(y) for y in b])
        vr = np.linalg.norm(fa - fb, axis=1) / dist
        jr = np.linalg.norm(ja - jb, ord=2, axis=(1, 2)) / dist
        out.append((float(vr.max()), float(jr.max())))
    return out


def certify_lipschitz(problem, n_pairs=10_000, seed=0, rtol=1e-9):
    """True when no sampled ratio exceeds the declared constant times (1 + rtol)."""
    for lv, (vr, jr) in zip(problem.levels, lipschitz_ratios(problem, n_pairs, seed)):
        if vr > lv.lip_value * (1 + rtol) or jr > lv.lip_grad * (1 + rtol):
            return False
    return True


def finite_difference_gradient(problem, x, h=1e-6):
    g = np.empty(problem.dim)
    for j in range(problem.dim):
        e = np.zeros(problem.dim)
        e[j] = h
        g[j] = (evaluate_truth(problem, x + e).value - evaluate_truth(problem, x - e).value) / (2 * h)
    return g


def gradient_check(problem, x, h=1e-6):
    """Relative error of the chain-rule gradient against central differences."""
    g = evaluate_truth(problem, x).grad
    fd = finite_difference_gradient(problem, x, h)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-8))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _encode(arr):
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}


def _decode(obj):
    return np.asarray(obj["data"], dtype=float).reshape(obj["shape"])


def problem_to_dict(problem):
    return {
        "format": FORMAT_TAG,
        "family": problem.family,
        "meta": problem.meta,
        "lower_bound": problem.lower_bound,
        "feasible_set": problem.feasible_set.describe(),
        "noise": [
            {"sigma_G": n.sigma_G, "sigma_J": n.sigma_J, "subsample": n.subsample}
            for n in problem.noise
        ],
        "levels": [
            {"kind": lv.kind, "arrays": {k: _encode(v) for k, v in lv.arrays().items()}}
            for lv in problem.levels
        ],
        "minimizer": None if problem.minimizer is None else _encode(problem.minimizer),
    }


def problem_from_dict(obj):
    if obj.get("format") != FORMAT_TAG:
        raise ConfigurationError(f"unrecognized problem format {obj.get('format')!r}")
    levels = []
    for entry in obj["levels"]:
        if entry["kind"] not in LEVEL_KINDS:
            raise ConfigurationError(f"unknown level kind {entry['kind']!r}")
        levels.append(LEVEL_KINDS[entry["kind"]]({k: _decode(v) for k, v in entry["arrays"].items()}))
    noise = tuple(NoiseSpec(**n) for n in obj["noise"])
    minimizer = None if obj.get("minimizer") is None else _decode(obj["minimizer"])
    return CompositionProblem(
        levels, feasible_set_from_dict(obj["feasible_set"]), obj.get("lower_bound"), noise,
        obj["family"], dict(obj.get("meta", {})), minimizer,
    )


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)


def load_problem(path):
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
