import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nestedavg import _pykernels, kernels

BACKENDS = kernels.available_backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")

floats = st.floats(-1e3, 1e3, allow_nan=False)
taus = st.floats(1e-6, 1.0)


def impls():
    out = [_pykernels]
    if kernels._ckernels is not None:
        out.append(kernels._ckernels)
    return out


def same(a, b):
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


@st.composite
def chain(draw):
    T = draw(st.integers(1, 4))
    dims = draw(st.lists(st.integers(1, 5), min_size=T, max_size=T))
    d = [1] + dims
    jacs = [draw(arrays(np.float64, (d[i], d[i - 1]), elements=floats)) for i in range(1, T + 1)]
    ws = [draw(arrays(np.float64, d[i - 1], elements=floats)) for i in range(1, T + 1)]
    gs = [draw(arrays(np.float64, d[i - 1], elements=floats)) for i in range(1, T + 1)]
    delta = draw(arrays(np.float64, d[T], elements=floats))
    return jacs, ws, gs, delta


@needs_compiled
@given(chain(), taus)
def test_chain_kernels_agree_bitwise(data, tau):
    jacs, ws, gs, delta = data
    py, cy = _pykernels, kernels._ckernels
    assert same(py.chain_product(jacs), cy.chain_product(jacs))
    assert same(py.nested_average(ws, gs, tau), cy.nested_average(ws, gs, tau))
    assert same(py.linearized_average(ws, gs, jacs, delta, tau), cy.linearized_average(ws, gs, jacs, delta, tau))


@needs_compiled
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=floats), st.data())
def test_matrix_kernels_agree_bitwise(A, data):
    v = data.draw(arrays(np.float64, A.shape[1], elements=floats))
    r = data.draw(arrays(np.float64, A.shape[0], elements=floats))
    py, cy = _pykernels, kernels._ckernels
    assert same(py.matvec(A, v), cy.matvec(A, v))
    assert same(py.rmatvec(A, r), cy.rmatvec(A, r))
    assert same(py.batch_mean(A), cy.batch_mean(A))
    assert same(py.seq_sum(v), cy.seq_sum(v))
    assert same(py.norm(v), cy.norm(v))


@needs_compiled
@given(arrays(np.float64, 5, elements=floats), arrays(np.float64, 5, elements=floats), taus, st.floats(0.01, 100))
def test_vector_kernels_agree_bitwise(p, q, tau, radius):
    py, cy = _pykernels, kernels._ckernels
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    assert same(py.moving_average(p, q, tau), cy.moving_average(p, q, tau))
    assert same(py.project_box(p * 2, lo, hi), cy.project_box(p * 2, lo, hi))
    assert same(py.project_ball(p, q, radius), cy.project_ball(p, q, radius))


@pytest.mark.parametrize("impl", impls(), ids=lambda m: m.__name__.rsplit(".", 1)[-1])
class TestKernelSemantics:
    def test_chain_product_matches_matmul(self, impl, rng):
        jacs = [rng.standard_normal((4, 1)), rng.standard_normal((3, 4)), rng.standard_normal((5, 3))]
        np.testing.assert_allclose(impl.chain_product(jacs), (jacs[2] @ jacs[1] @ jacs[0])[:, 0], rtol=1e-12)

    def test_linearized_average_descends(self, impl, rng):
        ws = [rng.standard_normal(1), rng.standard_normal(3)]
        gs = [rng.standard_normal(1), rng.standard_normal(3)]
        jacs = [rng.standard_normal((3, 1)), rng.standard_normal((2, 3))]
        delta = rng.standard_normal(2)
        tau = 0.3
        w2 = (1 - tau) * ws[1] + tau * gs[1] + jacs[1].T @ delta
        w1 = (1 - tau) * ws[0] + tau * gs[0] + jacs[0].T @ (w2 - ws[1])
        out = impl.linearized_average(ws, gs, jacs, delta, tau)
        np.testing.assert_allclose(out[1], w2, rtol=1e-12)
        np.testing.assert_allclose(out[0], w1, rtol=1e-12)

    def test_batch_mean(self, impl, rng):
        B = rng.standard_normal((7, 3))
        np.testing.assert_allclose(impl.batch_mean(B), B.mean(axis=0), rtol=1e-13)

    def test_projections(self, impl):
        np.testing.assert_array_equal(impl.project_box(np.array([-1.0, 0.2]), -0.5 * np.ones(2), 0.5 * np.ones(2)),
                                      [-0.5, 0.2])
        np.testing.assert_array_equal(impl.project_ball(np.array([2.0, 0.0]), np.zeros(2), 1.0), [1.0, 0.0])
        np.testing.assert_array_equal(impl.project_ball(np.array([0.5, 0.0]), np.zeros(2), 1.0), [0.5, 0.0])


def test_use_backend_switches_and_rejects_unknown():
    original = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.chain_product is _pykernels.chain_product
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(original)


def test_environment_forces_fallback():
    env = dict(os.environ, NESTEDAVG_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from nestedavg import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_full_runs_identical_across_backends(tanh3_box):
    from nestedavg.params import default_schedule, params_for, profile_of
    from nestedavg.solvers import RunConfig, run

    prof = profile_of(tanh3_box)
    original = kernels.BACKEND
    finals = {}
    try:
        for backend in BACKENDS:
            kernels.use_backend(backend)
            for variant in ("alg1", "alg2"):
                cfg = RunConfig(variant, params_for(variant, prof), default_schedule(64, variant, prof), seed=8)
                res = run(cfg, tanh3_box)
                finals[backend, variant] = (res.R, res.final.x, res.final.z, res.final.w)
    finally:
        kernels.use_backend(original)
    for variant in ("alg1", "alg2"):
        assert same(finals["cython", variant][1:], finals["python", variant][1:])
        assert finals["cython", variant][0] == finals["python", variant][0]
