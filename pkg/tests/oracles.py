"""Independent reference implementations used as test oracles.

Written separately from the engine code paths on purpose: plain scalar
Python, no numpy, no shared helpers.
"""

import math


def retention_oracle(n, utility, frequency, epsilon, temperature):
    stability = (utility + frequency + epsilon) * temperature
    return math.exp(-n / stability)


def dot(a, b):
    # sequential accumulation over the dimension, like the engine kernels
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def brute_force_topk(rows, query, k):
    """rows: list of (memory_id, committed_turn, vector). Full sort of every score."""
    scored = [(-dot(vec, query), -turn, mid) for mid, turn, vec in rows]
    scored.sort()
    return [(mid, -neg) for neg, _, mid in scored[:k]]


def gate_oracle(round_, buffer_empty, judge, embedding):
    """(triggered, reason) by the contract, written as an explicit case table."""
    if buffer_empty:
        return True, "empty_buffer"
    if round_ == 1:
        triggered = judge or embedding
    else:
        triggered = judge and embedding
    if not triggered:
        return False, "none"
    if judge and embedding:
        return True, "both_signals"
    return True, "judge_signal" if judge else "embedding_signal"
