"""Compare the numba and pure-numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are importable in one process (``*_numba`` / ``*_numpy`` in
``decaymem.kernels``); the script checks that they agree before timing.
"""

import argparse
import timeit

import numpy as np

from decaymem import kernels


def cases(rng):
    n = 200_000
    turns = rng.integers(0, 500, n).astype(np.float64)
    util = rng.uniform(0.05, 0.95, n)
    freq = rng.uniform(0.0, 1.0, n)
    mat = rng.normal(size=(5_000, 256))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    q = mat[17].copy()
    created = np.arange(151, dtype=np.int64)
    u0 = rng.uniform(0.05, 0.95, 151)
    mask = np.zeros(151, dtype=np.bool_)
    mask[20] = True
    return {
        "retention_many": ((turns, util, freq, 0.1, 10.0), "retention_many"),
        "dot_scores": ((mat, q), "dot_scores"),
        "simulate_population": ((created, u0, mask, 10.0, 0.1, 0.1, 5.0), "simulate_population"),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba unavailable (or DECAYMEM_DISABLE_NUMBA set); only the numpy path can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (call_args, base) in cases(rng).items():
        np_fn = getattr(kernels, f"{base}_numpy")
        nb_fn = getattr(kernels, f"{base}_numba")
        t_np = min(timeit.repeat(lambda: np_fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        if nb_fn is None:
            print(f"{name:<22} {t_np:>10.2f} {'-':>10} {'-':>8}")
            continue
        a, b = np_fn(*call_args), nb_fn(*call_args)  # also compiles
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=0, equal_nan=True)
        t_nb = min(timeit.repeat(lambda: nb_fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
