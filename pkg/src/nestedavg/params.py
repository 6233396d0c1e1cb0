"""Derived constants, algorithm parameters and step/batch schedules."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateConstantError

ALG1 = "alg1"
ALG2 = "alg2"
BASELINE = "sgd"
VARIANTS = (ALG1, ALG2, BASELINE)


def _prod(vals):
    out = 1.0
    for v in vals:
        out *= v
    return out


def composed_grad_lipschitz(lip_values, lip_grads, i=1):
    """Lipschitz constant of the gradient of the tail ``F_i = f_i o ... o f_T``.

    ``sum_{j=i}^T L_grad_j * prod_{l=i}^{j-1} L_l * prod_{l=j+1}^T L_l^2``,
    with ``lip_values[0]`` holding L_{f_1}. Empty products are 1.
    """
    Lf = list(lip_values)
    Lg = list(lip_grads)
    T = len(Lf)
    if len(Lg) != T:
        raise ConfigurationError("value and gradient constant lists differ in length")
    if not 1 <= i <= T:
        raise ConfigurationError(f"tail start {i} outside 1..{T}")
    total = 0.0
    for j in range(i, T + 1):
        head = _prod(Lf[l - 1] for l in range(i, j))
        tail = _prod(Lf[l - 1] ** 2 for l in range(j + 1, T + 1))
        total += Lg[j - 1] * head * tail
    return total


def chain_constants(lip_values, lip_grads):
    """Return ``(R, C)`` as dicts keyed by level: R_1..R_{T-1}, C_2..C_T.

    ``R_j = L_grad_j * prod_{l != j} L_l``; ``C_2 = R_1`` and
    ``C_j = sum_{i=1}^{j-2} R_i prod_{l=i+1}^{j-1} L_l`` for j >= 3.
    """
    Lf = list(lip_values)
    Lg = list(lip_grads)
    T = len(Lf)
    if T < 2:
        return {}, {}
    R = {}
    for j in range(1, T):
        if j >= 2 and Lf[j - 1] == 0 and Lg[j - 1] > 0:
            raise DegenerateConstantError(
                f"L_f{j} = 0 with L_grad_f{j} > 0: R_{j} divides by zero"
            )
        R[j] = Lg[j - 1] * _prod(Lf[l - 1] for l in range(1, T + 1) if l != j)
    C = {2: R[1]}
    for j in range(3, T + 1):
        C[j] = sum(R[i] * _prod(Lf[l - 1] for l in range(i + 1, j)) for i in range(1, j - 1))
    return R, C


def aggregated_chain_constants(lip_values, lip_grads):
    """Coefficients K_2..K_T with ``||grad F(x) - J_T(x) J_{T-1}(w_T) ... J_1(w_2)||
    <= sum_j K_j ||f_j(w_{j+1}) - w_j||`` (w_{T+1} = x).

    ``K_j = R_{j-1} + C_j`` for j >= 3 and ``K_2 = R_1``. The bound with C_j
    alone fails in general: with identity f_1, f_3 and f_2 = sin, every C_j
    is 0 while the left side is ``|cos x - cos w_3|``.
    """
    R, C = chain_constants(lip_values, lip_grads)
    return {j: C[j] + (R[j - 1] if j >= 3 else 0.0) for j in C}


@dataclass(frozen=True)
class LipschitzProfile:
    lip_values: tuple
    lip_grads: tuple
    grad_lipschitz: tuple  # L_{grad F_i}, i = 1..T
    R: dict
    C: dict

    @property
    def T(self):
        return len(self.lip_values)

    @property
    def L_grad_F(self):
        return self.grad_lipschitz[0]

    @property
    def max_C_sq(self):
        return max((c * c for c in self.C.values()), default=0.0)


def lipschitz_profile(lip_values, lip_grads):
    Lf = tuple(float(v) for v in lip_values)
    Lg = tuple(float(v) for v in lip_grads)
    if any(v < 0 for v in Lf + Lg):
        raise ConfigurationError("Lipschitz constants must be nonnegative")
    T = len(Lf)
    tails = tuple(composed_grad_lipschitz(Lf, Lg, i) for i in range(1, T + 1))
    R, C = chain_constants(Lf, Lg)
    return LipschitzProfile(Lf, Lg, tails, R, C)


def profile_of(problem):
    return lipschitz_profile(problem.lip_values, problem.lip_grads)


@dataclass(frozen=True)
class AlgParams:
    gamma: tuple
    lam: float
    beta: float
    variant: str

    @property
    def T(self):
        return len(self.gamma)


def alg1_condition_slack(params, profile):
    """Slack of every inequality in the Alg1 parameter condition.

    Returns a list of ``(name, lhs - rhs, strict)``; the condition holds when
    every strict entry is > 0 and every non-strict entry is >= 0.
    """
    g, lam, beta = params.gamma, params.lam, params.beta
    Lf, T = profile.lip_values, profile.T
    out = [("gamma_1 - lambda", g[0] - lam, False), ("lambda", lam, True)]
    for j in range(2, T + 1):
        gap = g[j - 1] - g[j - 2] * Lf[j - 2] ** 2 - lam
        out.append((f"gap_{j}", gap, True))
        out.append((f"coupling_{j}", 4.0 * (beta - lam - g[T - 1]) * gap - T * profile.C[j] ** 2, False))
    return out


def alg2_condition_slack(params, profile):
    g, lam, beta, T = params.gamma, params.lam, params.beta, profile.T
    out = [("gamma_1 - lambda", g[0] - lam, False), ("lambda", lam, True), ("beta - lambda", beta - lam, True)]
    for j in range(2, T + 1):
        out.append((f"coupling_{j}", (beta - lam) * (g[j - 1] - lam) - 4.0 * T * profile.C[j] ** 2, False))
    return out


def condition_holds(slack):
    return all((s > 0) if strict else (s >= 0) for _, s, strict in slack)


def alg1_params(profile):
    """Parameters for the mini-batch method.

    ``gamma_j = 2^{j-1} (L_1 ... L_{j-1})^2`` for j >= 2,
    ``gamma_1 = lambda = min_j gamma_j / 4`` and ``beta`` at its lower bound
    ``lambda + gamma_T + T max C_j^2 / (4 lambda)``.

    When L_{f_1}^2 > 2 that lambda violates the j = 2 inequalities; lambda is
    then lowered to ``L_1^2 / (1 + L_1^2)``, which satisfies all of them.
    """
    T = profile.T
    Lf = profile.lip_values
    if T == 1:
        lam = 0.5
        gamma = (lam,)
    else:
        tail = [2.0 ** (j - 1) * _prod(Lf[l - 1] for l in range(1, j)) ** 2 for j in range(2, T + 1)]
        lam = 0.25 * min(tail)
        if not lam > 0:
            raise ConfigurationError("lambda is zero: some L_f vanishes, the objective is constant")
        trial = _alg1_from(lam, tail, profile)
        if condition_holds(alg1_condition_slack(trial, profile)):
            return trial
        L1sq = Lf[0] ** 2
        lam = min(lam, L1sq / (1.0 + L1sq))
        gamma = (lam,) + tuple(tail)
    params = _alg1_from(lam, list(gamma[1:]), profile)
    if not params.beta > 0:
        raise ConfigurationError(f"computed beta {params.beta} is not positive")
    if not condition_holds(alg1_condition_slack(params, profile)):
        raise ConfigurationError("alg1 parameters fail their feasibility condition")
    return params


def _alg1_from(lam, tail, profile):
    gamma = (lam,) + tuple(tail)
    beta = lam + gamma[-1] + profile.T * profile.max_C_sq / (4.0 * lam)
    params = AlgParams(gamma, lam, beta, ALG1)
    # the last term can vanish in the sum; nudge beta so the couplings replay exactly
    for _ in range(64):
        slack = alg1_condition_slack(params, profile)
        if all(s > 0 for n, s, _ in slack if n.startswith("gap")) and any(
            s < 0 for n, s, _ in slack if n.startswith("coupling")
        ):
            params = AlgParams(gamma, lam, math.nextafter(params.beta, math.inf), ALG1)
        else:
            break
    return params


def alg2_params(profile):
    """``gamma_1 = lambda = 1``, ``beta = 2``, ``gamma_i = 1 + 4 T C_i^2``."""
    T = profile.T
    gamma = [1.0]
    for i in range(2, T + 1):
        need = 4.0 * T * profile.C[i] ** 2
        g = 1.0 + need
        while (2.0 - 1.0) * (g - 1.0) < need:  # keep the equality case exact in floats
            g = math.nextafter(g, math.inf)
        gamma.append(g)
    return AlgParams(tuple(gamma), 1.0, 2.0, ALG2)


def params_for(variant, profile):
    if variant == ALG1:
        return alg1_params(profile)
    if variant in (ALG2, BASELINE):
        p = alg2_params(profile)
        return AlgParams(p.gamma, p.lam, p.beta, variant)
    raise ConfigurationError(f"unknown variant {variant!r}")


def eta_grad_lipschitz(beta):
    """``2 sqrt((1 + beta)^2 + (1 + 1/(2 beta))^2)``."""
    if not beta > 0:
        raise ConfigurationError("beta must be positive")
    return 2.0 * math.sqrt((1.0 + beta) ** 2 + (1.0 + 1.0 / (2.0 * beta)) ** 2)


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``tau[0..N]`` and batch sizes ``batch[0..N]``."""

    N: int
    tau: tuple
    batch: tuple

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("N must be at least 1")
        if len(self.tau) != self.N + 1 or len(self.batch) != self.N + 1:
            raise ConfigurationError("schedule needs N + 1 entries")
        if any(not (0 < t <= 1) for t in self.tau):
            raise ConfigurationError("step sizes must lie in (0, 1]")
        if any(b < 1 for b in self.batch):
            raise ConfigurationError("batch sizes must be at least 1")

    def output_weights(self):
        """P[R = k] for k = 1..N."""
        w = np.asarray(self.tau[1:], dtype=float)
        return w / w.sum()


def batch_size(max_lip_sq, tau):
    return max(1, math.ceil(max_lip_sq / tau))


def default_schedule(N, variant, profile=None):
    """``tau_0 = 1, tau_k = 1/sqrt(N)``; batches ``ceil(max L_f^2 / tau_k)`` for alg1."""
    N = int(N)
    if N < 1:
        raise ConfigurationError("N must be at least 1")
    tau = (1.0,) + (1.0 / math.sqrt(N),) * N
    if variant == ALG1:
        if profile is None:
            raise ConfigurationError("alg1 batches need the Lipschitz profile")
        m = max(v * v for v in profile.lip_values)
        batch = tuple(batch_size(m, t) for t in tau)
    else:
        batch = (1,) * (N + 1)
    return Schedule(N, tau, batch)


def custom_schedule(tau, batch=None):
    tau = tuple(float(t) for t in tau)
    N = len(tau) - 1
    batch = (1,) * (N + 1) if batch is None else tuple(int(b) for b in batch)
    return Schedule(N, tau, batch)
