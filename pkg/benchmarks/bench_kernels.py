"""Time the numpy and numba kernels on the same inputs and check they agree.

    python3 benchmarks/bench_kernels.py [--points 257] [--samples 1024] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from roughbsde import _kernels


def cases(points, samples, seed=0):
    rng = np.random.default_rng(seed)
    path = np.cumsum(rng.standard_normal((points, 2)), axis=0)
    diff = path[None, :, :] - path[:, None, :]
    powered = np.sqrt(np.sum(diff * diff, axis=-1)) ** 2.5
    values = np.cumsum(rng.standard_normal((samples, points, 1)), axis=1)
    deriv = rng.standard_normal((samples, points, 1, 2))
    return {
        "pvar_dp": (powered,),
        "pvar_dp_from_right": (powered,),
        "pairwise_lm": (values, 2.0),
        "pairwise_remainder": (values, deriv, path[None], 2.0),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=257)
    parser.add_argument("--samples", type=int, default=1024)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba not importable; only the numpy backend can be timed")
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    inputs = cases(args.points, args.samples)
    print(f"{'kernel':22s} " + " ".join(f"{b + ' [ms]':>12s}" for b in backends) + f" {'speed-up':>9s} {'max diff':>10s}")
    for name, call_args in inputs.items():
        outputs, times = {}, {}
        for backend in backends:
            _kernels.USE_NUMBA = backend == "numba"
            fn = getattr(_kernels, name)
            outputs[backend] = np.asarray(fn(*call_args))  # also triggers compilation
            times[backend] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        row = f"{name:22s} " + " ".join(f"{times[b]:12.2f}" for b in backends)
        if len(backends) == 2:
            diff = float(np.max(np.abs(outputs["numpy"] - outputs["numba"])))
            row += f" {times['numpy'] / times['numba']:9.1f} {diff:10.1e}"
        print(row)


if __name__ == "__main__":
    main()
