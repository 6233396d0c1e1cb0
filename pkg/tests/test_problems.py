import numpy as np
import pytest
from scipy.optimize import minimize

from nestedavg.core import Box, EuclideanBall, NoiseSpec, evaluate_truth
from nestedavg.diagnostics import merit_W, stationarity_V
from nestedavg.errors import ConfigurationError
from nestedavg.params import alg1_params, alg2_params, profile_of
from nestedavg.problems import (
    certify_lipschitz,
    gradient_check,
    load_problem,
    make_generative_recovery,
    make_problem,
    make_quadratic_free_chain,
    make_tanh_chain,
    problem_from_dict,
    problem_to_dict,
    save_problem,
)


def multistart_minimum(problem, starts=20, seed=0):
    gen = np.random.default_rng(seed)
    fs = problem.feasible_set
    bounds = list(zip(fs.lower, fs.upper)) if isinstance(fs, Box) else None
    best = np.inf
    for x0 in gen.uniform(-2, 2, (starts, problem.dim)):
        x0 = fs.project(x0)
        res = minimize(lambda x: evaluate_truth(problem, x).value, x0, jac=lambda x: evaluate_truth(problem, x).grad,
                       method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        best = min(best, res.fun)
    return best


class TestQuadraticChain:
    def test_single_level(self):
        p = make_quadratic_free_chain(1, [4], 3)
        assert p.lower_bound == 0.0
        np.testing.assert_allclose(p.minimizer, p.level(1).center, atol=1e-15)

    def test_identity_chain(self):
        p = make_quadratic_free_chain(2, [2, 2], 0, matrices=[np.eye(2)], offsets=[np.zeros(2)], center=np.zeros(2))
        assert p.lower_bound == 0.0
        np.testing.assert_array_equal(p.minimizer, np.zeros(2))

    def test_declared_constants(self):
        p = make_quadratic_free_chain(3, [6, 5, 4], 0)
        # gradient entries lie in (-1, 1), so the head's Euclidean constant is sqrt(d)
        assert p.lip_values[0] == pytest.approx(np.sqrt(4)) and p.lip_grads[0] == 1.0
        assert all(g == 0.0 for g in p.lip_grads[1:])
        for i in (2, 3):
            assert p.lip_values[i - 1] == pytest.approx(np.linalg.norm(p.level(i).matrix, 2))

    @pytest.mark.parametrize("fs", [None, Box(-0.05, 0.05, dim=6)])
    def test_optimum_matches_multistart(self, fs):
        p = make_quadratic_free_chain(3, [6, 5, 4], 0, feasible_set=fs)
        assert evaluate_truth(p, p.minimizer).value == pytest.approx(p.lower_bound, abs=1e-12)
        assert abs(p.lower_bound - multistart_minimum(p)) <= 1e-8

    def test_non_surjective_chain(self):
        # 3 -> 5 inner map cannot reach every center
        p = make_quadratic_free_chain(2, [3, 5], 1)
        assert p.lower_bound > 0
        assert abs(p.lower_bound - multistart_minimum(p)) <= 1e-8

    def test_dims_checked(self):
        with pytest.raises(ConfigurationError):
            make_quadratic_free_chain(3, [4, 4], 0)
        with pytest.raises(ConfigurationError):
            make_quadratic_free_chain(2, [4, 4, 2], 0)


class TestTanhChain:
    def test_zero_weights(self, rng):
        p = make_tanh_chain(2, [3, 3], 0, weights=[np.zeros((1, 3)), np.zeros((3, 3))])
        x = rng.standard_normal(3)
        t = evaluate_truth(p, x)
        assert t.value == 0.0 and not t.grad.any()
        assert stationarity_V(p, x, np.zeros(3)) == 0.0

    def test_constants(self):
        p = make_tanh_chain(3, [8, 8, 8], 1, gain=1.5)
        for lv in p.levels:
            assert lv.lip_value == pytest.approx(1.5)
            assert lv.lip_grad == pytest.approx(1.5 * 4 / (3 * np.sqrt(3)))

    def test_five_levels_finite_difference(self, rng):
        p = make_tanh_chain(5, [8] * 5, 0)
        for x in rng.uniform(-3, 3, (20, 8)):
            assert np.all(np.isfinite(evaluate_truth(p, x).grad))
            assert gradient_check(p, x) <= 1e-5

    def test_no_optimal_value(self):
        assert make_tanh_chain(2, [4, 4], 0).lower_bound is None


class TestGenerativeRecovery:
    @pytest.fixture(scope="class")
    @classmethod
    def planted(cls):
        return make_generative_recovery(3, 10, 2, 0)

    def test_planted_minimum(self, planted):
        t = evaluate_truth(planted, planted.minimizer)
        assert t.value == pytest.approx(0.0, abs=1e-28)
        assert np.linalg.norm(t.grad) <= 1e-14
        assert planted.lower_bound == 0.0 and planted.T == 3

    def test_stationarity_at_planted(self, planted):
        z = planted.minimizer
        assert stationarity_V(planted, z, evaluate_truth(planted, z).grad) <= 1e-28

    def test_oracle_mean_over_support_is_exact(self, planted, rng):
        layer = planted.level(2)
        y = rng.standard_normal(layer.in_dim)
        m = layer.support_size
        pre = np.einsum("jsk,k->js", layer.weights, y) - layer.biases
        np.testing.assert_allclose((1 / (1 + np.exp(-pre))).mean(axis=1), layer.value(y), rtol=1e-15)
        head = planted.level(1)
        x = rng.standard_normal(head.in_dim)
        r = head.measurements - head.sensing @ x
        assert np.mean(r * r) == pytest.approx(head.value(x)[0], rel=1e-14)
        assert m == 8

    def test_measurement_noise_drops_optimal_value(self):
        p = make_generative_recovery(3, 10, 2, 0, measurement_noise=0.1)
        assert p.lower_bound is None

    @pytest.mark.parametrize("kw", [{"depth": 0}, {"k_latent": 10}])
    def test_invalid(self, kw):
        args = {"k_latent": 3, "d_signal": 10, "depth": 2, "seed": 0, **kw}
        with pytest.raises(ConfigurationError):
            make_generative_recovery(**args)


ALL = [
    ("quadratic", lambda: make_quadratic_free_chain(3, [6, 5, 4], 0, noise=NoiseSpec(0.1, 0.1))),
    ("quadratic_ball", lambda: make_quadratic_free_chain(2, [4, 4], 2, feasible_set=EuclideanBall(np.zeros(4), 0.3))),
    ("tanh", lambda: make_tanh_chain(3, [8, 8, 8], 1)),
    ("tanh_wide", lambda: make_tanh_chain(2, [5, 7], 4, gain=2.0)),
    ("generative", lambda: make_generative_recovery(3, 10, 2, 3)),
]


@pytest.mark.parametrize("name, build", ALL)
def test_instances_are_certified(name, build):
    p = build()
    assert certify_lipschitz(p, n_pairs=2000)
    gen = np.random.default_rng(1)
    for x in p.level(p.T).sample_domain(gen, 20):
        assert gradient_check(p, x) <= 1e-5


@pytest.mark.parametrize("name, build", ALL)
def test_generation_is_deterministic(name, build):
    a, b = problem_to_dict(build()), problem_to_dict(build())
    assert a == b


@pytest.mark.parametrize("name, build", ALL)
def test_serialization_round_trip(name, build, tmp_path, rng):
    p = build()
    path = tmp_path / f"{name}.json"
    save_problem(p, path)
    q = load_problem(path)
    assert problem_to_dict(q) == problem_to_dict(p)
    assert q.lower_bound == p.lower_bound and q.family == p.family
    for x in p.level(p.T).sample_domain(rng, 5):
        np.testing.assert_array_equal(evaluate_truth(q, x).grad, evaluate_truth(p, x).grad)


def test_dict_format_tag_checked():
    d = problem_to_dict(make_tanh_chain(1, [2], 0))
    d["format"] = "other"
    with pytest.raises(ConfigurationError):
        problem_from_dict(d)


@pytest.mark.parametrize("name, build", [a for a in ALL if a[0] in ("quadratic", "generative")])
def test_merit_nonnegative_on_random_states(name, build):
    p = build()
    gen = np.random.default_rng(5)
    prof = profile_of(p)
    for params in (alg1_params(prof), alg2_params(prof)):
        for x in p.level(p.T).sample_domain(gen, 300):
            z = gen.standard_normal(p.dim)
            w = [gen.standard_normal(lv.out_dim) for lv in p.levels]
            assert merit_W(p, params, x, z, w) >= -1e-12


@pytest.mark.parametrize("family", ["quadratic_free_chain", "tanh_chain", "generative_recovery"])
def test_make_problem_families(family):
    p = make_problem(family, T=3, seed=0, noise_scale=0.1, feasible="ball", radius=0.5)
    assert p.family == family and p.T == 3


def test_make_problem_unknown():
    with pytest.raises(ConfigurationError):
        make_problem("mystery")
