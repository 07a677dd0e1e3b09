"""Time the compiled kernels against their interpreted originals.

    python benchmarks/bench_kernels.py --trials 20000 --repeat 3

Both paths get the same pre-drawn uniforms, so the outputs are compared as
well as timed. ``py_func`` only interprets the outer loop; helpers it calls
stay compiled. Run with QOSORACLE_DISABLE_NUMBA=1 for a fully interpreted
baseline (both columns then match).
"""

import argparse
import time

import numpy as np

from qosoracle import _accel, kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(trials, items, m, rng):
    w = rng.uniform(0.01, 5.0, items)
    u_exp = kernels.open_uniforms(rng, (trials, kernels.aexpj_draws_needed(items)))
    u_res = kernels.open_uniforms(rng, (trials, items))
    lat = np.abs(rng.normal(100.0, 30.0, (trials, items))) + 1e-3
    return {
        "aexpj_trials": (kernels.aexpj_trials, (w, m, u_exp)),
        "ares_trials": (kernels.ares_trials, (w, m, u_res)),
        "epoch_agreement": (kernels.epoch_agreement, (lat, 75.0, 50.0, m)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--items", type=int, default=10)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"numba enabled: {_accel.NUMBA_ENABLED}; trials={args.trials} items={args.items} m={args.m}")
    print(f"{'kernel':<18}{'compiled s':>12}{'python s':>12}{'speedup':>10}  same")
    for name, (fn, fargs) in cases(args.trials, args.items, args.m, rng).items():
        fn(*fargs)  # warm up / compile
        fast, a = best_of(lambda: fn(*fargs), args.repeat)
        slow, b = best_of(lambda: fn.py_func(*fargs), args.repeat)
        same = all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(a, b))
        print(f"{name:<18}{fast:>12.4f}{slow:>12.4f}{slow / fast:>10.1f}  {same}")


if __name__ == "__main__":
    main()
