import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nestedavg.core import Box, FullSpace, evaluate_truth
from nestedavg.diagnostics import (
    eta_value,
    fit_rate,
    inner_errors,
    merit_W,
    record_iteration,
    recorder_for,
    stationarity_V,
)
from nestedavg.errors import ConfigurationError, UnsupportedDiagnostic
from nestedavg.params import alg1_params, alg2_params, default_schedule, profile_of
from nestedavg.problems import make_quadratic_free_chain
from nestedavg.solvers import RunConfig, initial_state, run


class TestEta:
    def test_zero_direction(self, rng):
        assert eta_value(rng.standard_normal(3), np.zeros(3), 2.0, FullSpace(3)) == 0.0

    def test_unconstrained_closed_form(self):
        assert eta_value(np.array([5.0, -1.0]), np.array([2.0, 0.0]), 2.0, FullSpace(2)) == -1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_box_against_grid_search(self, seed):
        gen = np.random.default_rng(seed)
        box = Box(-0.5, 0.5, dim=2)
        x = gen.uniform(-0.5, 0.5, 2)
        z = 3 * gen.standard_normal(2)
        beta = gen.uniform(0.5, 4.0)
        grid = np.linspace(-0.5, 0.5, 2001)
        Y = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2) - x
        brute = np.min(Y @ z + 0.5 * beta * np.sum(Y * Y, axis=1))
        assert eta_value(x, z, beta, box) == pytest.approx(brute, abs=1e-6)

    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.floats(0.1, 10))
    def test_nonpositive(self, x, z, beta):
        assert eta_value(np.array(x), np.array(z), beta, Box(-1, 1, dim=3)) <= 0.0


class TestStationarity:
    def test_zero_at_stationary_point(self):
        p = make_quadratic_free_chain(1, [3], 0)
        x = p.minimizer
        assert stationarity_V(p, x, evaluate_truth(p, x).grad) == pytest.approx(0.0, abs=1e-28)

    def test_bounds_half_squared_gradient(self, tanh3, rng):
        for _ in range(1000):
            x = rng.uniform(-3, 3, 8)
            z = rng.standard_normal(8)
            g = evaluate_truth(tanh3, x).grad
            V = stationarity_V(tanh3, x, z)
            assert V == pytest.approx(z @ z + (z - g) @ (z - g), rel=1e-12)
            assert V >= 0.5 * (g @ g) * (1 - 1e-12)

    def test_boundary_point_against_kkt(self):
        p = make_quadratic_free_chain(3, [6, 5, 4], 0, feasible_set=Box(-0.05, 0.05, dim=6))
        x = p.minimizer
        g = evaluate_truth(p, x).grad
        active = np.isclose(np.abs(x), 0.05)
        assert active.any()
        # KKT: interior gradient ~0, multipliers on the active faces point outward
        assert np.max(np.abs(g[~active]), initial=0.0) <= 1e-6
        assert np.all(g[active] * np.sign(x[active]) <= 1e-9)
        u = p.feasible_set.project(x - g)
        assert stationarity_V(p, x, g) == pytest.approx((u - x) @ (u - x), abs=1e-15)
        assert stationarity_V(p, x, g) <= 1e-12

    def test_zero_only_when_both_terms_vanish(self, tanh3, rng):
        x = rng.uniform(-1, 1, 8)
        g = evaluate_truth(tanh3, x).grad
        assert stationarity_V(tanh3, x, g) > 0  # unconstrained: u - x = -g != 0


class TestMerit:
    def test_zero_at_minimizer(self, quad3):
        s = initial_state(quad3, x0=quad3.minimizer)
        params = alg1_params(profile_of(quad3))
        assert merit_W(quad3, params, s.x, np.zeros(quad3.dim), s.w) == pytest.approx(0.0, abs=1e-12)

    def test_exact_inner_values_give_minus_eta(self, quad3, rng):
        params = alg2_params(profile_of(quad3))
        s = initial_state(quad3, x0=quad3.minimizer)
        z = rng.standard_normal(quad3.dim)
        W = merit_W(quad3, params, s.x, z, s.w)
        assert W == pytest.approx(-eta_value(s.x, z, params.beta, quad3.feasible_set), abs=1e-12)
        assert W >= 0

    @pytest.mark.parametrize("variant", ["alg1", "alg2"])
    def test_nonnegative_on_random_states(self, quad3, variant):
        gen = np.random.default_rng(3)
        prof = profile_of(quad3)
        params = alg1_params(prof) if variant == "alg1" else alg2_params(prof)
        worst = math.inf
        for _ in range(10_000):
            x = 2 * gen.standard_normal(quad3.dim)
            z = 2 * gen.standard_normal(quad3.dim)
            w = [2 * gen.standard_normal(lv.out_dim) for lv in quad3.levels]
            worst = min(worst, merit_W(quad3, params, x, z, w))
        assert worst >= -1e-12

    def test_unknown_optimum(self, tanh3):
        s = initial_state(tanh3)
        with pytest.raises(UnsupportedDiagnostic):
            merit_W(tanh3, alg2_params(profile_of(tanh3)), s.x, s.z, s.w)


class TestRecords:
    def test_initial_record(self, tanh3):
        params = alg2_params(profile_of(tanh3))
        rec = record_iteration(initial_state(tanh3), tanh3, params)
        assert rec.k == 0 and rec.inner_errs == (0.0, 0.0, 0.0)
        assert math.isnan(rec.merit)

    def test_fixed_point_record(self):
        p = make_quadratic_free_chain(1, [2], 0)
        s = initial_state(p, x0=p.minimizer)
        rec = record_iteration(s, p, alg2_params(profile_of(p)))
        assert rec.V == pytest.approx(0.0, abs=1e-28) and rec.merit == pytest.approx(0.0, abs=1e-14)

    def test_fields_recompute_from_snapshot(self, tanh3_box):
        prof = profile_of(tanh3_box)
        params = alg2_params(prof)
        states = []
        run(RunConfig("alg2", params, default_schedule(20, "alg2"), seed=2), tanh3_box, recorder=states.append)
        s = states[13]
        rec = record_iteration(s, tanh3_box, params)
        g = evaluate_truth(tanh3_box, s.x).grad
        u1 = tanh3_box.feasible_set.project(s.x - s.z)
        assert rec.V == (u1 - s.x) @ (u1 - s.x) + (s.z - g) @ (s.z - g)
        assert rec.grad_err == pytest.approx(np.linalg.norm(g - s.z), rel=1e-14)
        assert rec.inner_errs == tuple(inner_errors(tanh3_box, s.x, s.w))
        uB = tanh3_box.feasible_set.project(s.x - s.z / params.beta)
        assert rec.step_norm == pytest.approx(np.linalg.norm(uB - s.x), rel=1e-14)

    @pytest.mark.parametrize("variant", ["alg1", "alg2"])
    def test_trace_bounds(self, tanh3_box, variant):
        prof = profile_of(tanh3_box)
        params = alg1_params(prof) if variant == "alg1" else alg2_params(prof)
        res = run(RunConfig(variant, params, default_schedule(100, variant, prof), seed=1),
                  tanh3_box, recorder_for(tanh3_box, params))
        for prev, rec in zip(res.trace, res.trace[1:]):
            assert rec.V <= max(1.0, params.beta**2) * rec.step_norm**2 + rec.grad_err**2 + 1e-15
            assert rec.calls_value > prev.calls_value and rec.calls_jac > prev.calls_jac


class TestFitRate:
    def test_exact_power_law(self):
        grid = [100, 400, 1600]
        fit = fit_rate(grid, [7 / math.sqrt(n) for n in grid])
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(7), abs=1e-12)

    def test_constant(self):
        assert fit_rate([10, 20, 40], [3.0] * 3).slope == pytest.approx(0.0, abs=1e-12)

    def test_nonpositive_excluded(self):
        fit = fit_rate([10, 20, 40, 80], [1.0, 0.5, 0.0, 0.125])
        assert fit.excluded == (40,)
        assert fit.slope == pytest.approx(-1.0)

    @pytest.mark.parametrize("grid, means", [([1, 2], [1, 1]), ([1, 1, 2], [1, 1, 1]), ([1, 2, 3], [1, 2])])
    def test_invalid(self, grid, means):
        with pytest.raises(ConfigurationError):
            fit_rate(grid, means)

    @given(st.floats(-2, 2), st.floats(-3, 3))
    def test_recovers_any_slope(self, slope, icpt):
        grid = [16, 64, 256, 1024]
        fit = fit_rate(grid, [math.exp(icpt) * n**slope for n in grid])
        assert fit.slope == pytest.approx(slope, abs=1e-9)


def test_inner_errors_vanish_down_exact_chain(quad3, rng):
    s = initial_state(quad3, x0=rng.standard_normal(quad3.dim))
    assert inner_errors(quad3, s.x, s.w) == [0.0] * 3
    perturbed = list(s.w)
    perturbed[1] = perturbed[1] + 0.5
    errs = inner_errors(quad3, s.x, perturbed)
    assert errs[1] == pytest.approx(0.5 * math.sqrt(len(perturbed[1])))
    assert errs[2] == 0.0 and errs[0] > 0.0

