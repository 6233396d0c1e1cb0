"""Compare the compiled and pure-numpy kernel backends.

Usage: python benchmarks/bench_backends.py [--repeat 5]

Times each kernel on solver-sized inputs and a full Alg2 run on the
T = 3 tanh chain, and confirms both backends return identical bits.
"""

import argparse
import time
import timeit

import numpy as np

from nestedavg import kernels
from nestedavg.core import Box, NoiseSpec
from nestedavg.params import default_schedule, params_for, profile_of
from nestedavg.problems import make_tanh_chain
from nestedavg.solvers import RunConfig, run


def kernel_cases(gen, width=8, T=3):
    J = [gen.standard_normal((width, width)) for _ in range(T - 1)] + [gen.standard_normal((width, 1))]
    J = J[::-1]  # J_1 has one column
    ws = [gen.standard_normal(1)] + [gen.standard_normal(width) for _ in range(T - 1)]
    gs = [w + 0.1 for w in ws]
    jt = [gen.standard_normal((width, 1))] + [gen.standard_normal((width, width)) for _ in range(T - 1)]
    delta = gen.standard_normal(width)
    batch = gen.standard_normal((64, width))
    p = 3 * gen.standard_normal(width)
    return {
        "chain_product": lambda k: k.chain_product(J),
        "batch_mean": lambda k: k.batch_mean(batch),
        "moving_average": lambda k: k.moving_average(p, delta, 0.1),
        "nested_average": lambda k: k.nested_average(ws, gs, 0.1),
        "linearized_average": lambda k: k.linearized_average(ws, gs, jt, delta, 0.1),
        "project_box": lambda k: k.project_box(p, -np.ones(width), np.ones(width)),
        "project_ball": lambda k: k.project_ball(p, np.zeros(width), 1.0),
    }


def _same(a, b):
    if isinstance(a, (list, tuple)):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def bench_kernels(repeat, number=2000):
    gen = np.random.default_rng(0)
    rows = []
    for name, call in kernel_cases(gen).items():
        res, times = {}, {}
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            res[backend] = call(kernels)
            times[backend] = min(timeit.repeat(lambda: call(kernels), number=number, repeat=repeat)) / number
        same = len(res) < 2 or _same(res["cython"], res["python"])
        rows.append((name, times, same))
    return rows


def bench_run(repeat, N=1024):
    problem = make_tanh_chain(3, [8, 8, 8], 1, feasible_set=Box(-0.1, 0.1, dim=8), noise=NoiseSpec(0.1, 0.1))
    prof = profile_of(problem)
    params = params_for("alg2", prof)
    cfg = RunConfig("alg2", params, default_schedule(N, "alg2", prof), seed=3, record=False)
    out, finals = {}, {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            finals[backend] = run(cfg, problem).final
            best = min(best, time.perf_counter() - t0)
        out[backend] = best
    same = len(finals) < 2 or (
        np.array_equal(finals["cython"].x, finals["python"].x)
        and np.array_equal(finals["cython"].z, finals["python"].z)
    )
    return out, same


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<20}" + "".join(f"{b + ' (us)':>16}" for b in backends) + f"{'speedup':>10}  identical")
    for name, times, same in bench_kernels(args.repeat):
        cols = "".join(f"{times[b] * 1e6:16.2f}" for b in backends)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<20}{cols}{speed:10.2f}  {same}")
    times, same = bench_run(args.repeat)
    cols = "".join(f"{times[b]:16.3f}" for b in backends)
    speed = times["python"] / times["cython"] if "cython" in times else float("nan")
    print(f"{'alg2 run N=1024 (s)':<20}{cols}{speed:10.2f}  {same}")
    kernels.use_backend(backends[0])


if __name__ == "__main__":
    main()
