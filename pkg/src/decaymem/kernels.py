"""Hot numeric kernels with a numba path and a pure-numpy path.

Both paths are always importable as ``*_numpy`` / ``*_numba`` so the
benchmark can compare them in one process; the unsuffixed names are the ones
the engine uses and follow :mod:`decaymem._accel`.

Float accumulation order is fixed (sequential over the embedding dimension)
so that the numba and numpy scorers agree bit for bit with a plain Python
loop.
"""

import math

import numpy as np

from decaymem._accel import HAS_NUMBA, njit

UTILITY_MIN = 0.05
UTILITY_MAX = 0.95


def _retention_many_py(turns_since, utility, frequency, epsilon, temperature):
    out = np.empty(turns_since.shape[0])
    for i in range(turns_since.shape[0]):
        s = (utility[i] + frequency[i] + epsilon) * temperature
        out[i] = math.exp(-turns_since[i] / s)
    return out


def retention_many_numpy(turns_since, utility, frequency, epsilon, temperature):
    s = (utility + frequency + epsilon) * temperature
    return np.exp(-turns_since / s)


def _dot_scores_py(matrix, query):
    m, d = matrix.shape
    out = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(d):
            acc += matrix[i, j] * query[j]
        out[i] = acc
    return out


def dot_scores_numpy(matrix, query):
    acc = np.zeros(matrix.shape[0])
    for j in range(matrix.shape[1]):
        acc += matrix[:, j] * query[j]
    return acc


def _simulate_py(created, utility0, reinforce, temperature, epsilon, delta, half_saturation):
    steps = reinforce.shape[0]
    n_ent = created.shape[0]
    retention = np.full((steps, n_ent), np.nan)
    elapsed = np.full((steps, n_ent), -1, dtype=np.int64)
    util_out = np.full((steps, n_ent), np.nan)
    freq_out = np.full((steps, n_ent), np.nan)
    last = created.copy()
    count = np.zeros(n_ent, dtype=np.int64)
    util = utility0.copy()
    for t in range(steps):
        for i in range(n_ent):
            if created[i] > t:
                continue
            if reinforce[t]:
                last[i] = t
                count[i] += 1
                u = util[i] + delta
                if u > UTILITY_MAX:
                    u = UTILITY_MAX
                if u < UTILITY_MIN:
                    u = UTILITY_MIN
                util[i] = u
            f = count[i] / (count[i] + half_saturation)
            n = t - last[i]
            s = (util[i] + f + epsilon) * temperature
            retention[t, i] = math.exp(-n / s)
            elapsed[t, i] = n
            util_out[t, i] = util[i]
            freq_out[t, i] = f
    return retention, elapsed, util_out, freq_out


def simulate_population_numpy(created, utility0, reinforce, temperature, epsilon, delta, half_saturation):
    steps = reinforce.shape[0]
    n_ent = created.shape[0]
    retention = np.full((steps, n_ent), np.nan)
    elapsed = np.full((steps, n_ent), -1, dtype=np.int64)
    util_out = np.full((steps, n_ent), np.nan)
    freq_out = np.full((steps, n_ent), np.nan)
    last = created.copy()
    count = np.zeros(n_ent, dtype=np.int64)
    util = utility0.copy()
    for t in range(steps):
        alive = created <= t
        if reinforce[t]:
            last[alive] = t
            count[alive] += 1
            util[alive] = np.clip(util[alive] + delta, UTILITY_MIN, UTILITY_MAX)
        f = count / (count + half_saturation)
        n = t - last
        s = (util + f + epsilon) * temperature
        retention[t, alive] = np.exp(-n[alive] / s[alive])
        elapsed[t, alive] = n[alive]
        util_out[t, alive] = util[alive]
        freq_out[t, alive] = f[alive]
    return retention, elapsed, util_out, freq_out


if HAS_NUMBA:
    retention_many_numba = njit(_retention_many_py)
    dot_scores_numba = njit(_dot_scores_py)
    simulate_population_numba = njit(_simulate_py)
    retention_many = retention_many_numba
    dot_scores = dot_scores_numba
    simulate_population = simulate_population_numba
else:
    retention_many_numba = dot_scores_numba = simulate_population_numba = None
    retention_many = retention_many_numpy
    dot_scores = dot_scores_numpy
    simulate_population = simulate_population_numpy


def retention_batch(turns_since, utility, frequency, epsilon: float, temperature: float) -> np.ndarray:
    """Vectorised ``exp(-n / ((U + F + eps) * T))`` over aligned arrays."""
    n = np.ascontiguousarray(turns_since, dtype=np.float64)
    u = np.ascontiguousarray(utility, dtype=np.float64)
    f = np.ascontiguousarray(frequency, dtype=np.float64)
    if n.shape[0] == 0:
        return np.empty(0)
    return retention_many(n, u, f, float(epsilon), float(temperature))


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot products of unit rows against a unit query."""
    if matrix.shape[0] == 0:
        return np.empty(0)
    return dot_scores(np.ascontiguousarray(matrix, dtype=np.float64), np.ascontiguousarray(query, dtype=np.float64))
