"""Compare the compiled kernels with the numpy fallback.

Times every kernel on representative inputs and a full BDM/UKF tracking run
with each backend::

    python benchmarks/bench_backends.py [--repeat 5] [--steps 400]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from bdmfilter import _backend
from bdmfilter.experiment import ExperimentConfig, run_single


def kernel_cases(rng):
    A = rng.standard_normal((5, 5))
    P = A @ A.T + np.eye(5)
    X = np.ascontiguousarray(np.array([0.0, 10.0, 0.0, -5.0, 0.05]) + rng.standard_normal((11, 5)))
    Y = np.ascontiguousarray(rng.standard_normal((11, 4)))
    big = np.ascontiguousarray(rng.standard_normal((100, 5)))
    sensors = np.array([[0.0, 0.0], [350.0, 350.0], [700.0, 0.0], [1050.0, 350.0]])
    w = np.full(11, 0.1)
    return {
        "cholesky_jitter (5x5)": ("cholesky_jitter", (P,)),
        "sigma_points (d=5)": ("sigma_points", (np.zeros(5), P, 0.0)),
        "weighted_moments (11 pts)": ("weighted_moments", (X, Y, X[0].copy(), w, w)),
        "coord_turn (100 rows)": ("coord_turn", (big, 1.0)),
        "coord_turn_jacobian (100 rows)": ("coord_turn_jacobian", (big, 1.0)),
        "ranges (100 rows)": ("ranges", (big, sensors)),
        "range_jacobian (100 rows)": ("range_jacobian", (big, sensors)),
        "mixture_score_info (100x100)": ("mixture_score_info", (
            np.ascontiguousarray(rng.standard_normal((100, 100))),
            np.ascontiguousarray(rng.standard_normal((100, 100, 4))),
            np.ascontiguousarray(rng.standard_normal((100, 4, 5))))),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=400)
    args = parser.parse_args(argv)

    names = _backend.available()
    if "compiled" not in names:
        print("compiled extension not built; only the numpy fallback is available")
    mods = {n: _backend.load(n) for n in names}
    rng = np.random.default_rng(0)

    header = f"{'case':34s}" + "".join(f"{n:>14s}" for n in names) + ("     speed-up" if len(names) > 1 else "")
    print(header)
    print("-" * len(header))
    for label, (fname, fargs) in kernel_cases(rng).items():
        times = [best_of(lambda m=mods[n]: getattr(m, fname)(*fargs), args.repeat) for n in names]
        row = f"{label:34s}" + "".join(f"{t * 1e6:11.1f} us" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:12.1f}x"
        print(row)

    cfg = ExperimentConfig(case="persistent", lambdas=(0.8,), runs=1, steps=args.steps, seed=0)
    for filt in ("bdm", "ukf"):
        c = ExperimentConfig(**{**cfg.to_dict(), "filters": [filt]})
        times = []
        for n in names:
            with _backend.using(n):
                times.append(min(timeit.repeat(lambda: run_single(c, 0.8, 0), repeat=max(1, args.repeat // 2),
                                               number=1)))
        row = f"{f'full {filt} run ({args.steps} steps)':34s}" + "".join(f"{t * 1e3:11.1f} ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
