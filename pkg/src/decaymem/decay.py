"""Interaction-based forgetting curve and reinforcement updates.

Retention of an entity (cluster or memory) ``n`` turns after its last access
is ``exp(-n / S)`` with stability ``S = (utility + access_frequency + eps) * T``.
Decay is lazy: nothing is stored per turn, retention is recomputed from
``last_access_turn`` whenever a view is needed.
"""

from __future__ import annotations

import math
from typing import Iterable, Union

import numpy as np

from decaymem.kernels import UTILITY_MAX, UTILITY_MIN, retention_batch
from decaymem.model import Cluster, EngineConfig, Memory

Target = Union[Cluster, Memory]


class NumericDomainError(ValueError):
    pass


def _finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise NumericDomainError(f"{name} must be finite, got {v!r}")


def stability(utility: float, access_frequency: float, epsilon: float, temperature: float) -> float:
    _finite(utility=utility, access_frequency=access_frequency, epsilon=epsilon, temperature=temperature)
    if epsilon <= 0 or temperature <= 0:
        raise NumericDomainError("epsilon and temperature must be > 0")
    if not (0.0 <= utility <= 1.0 and 0.0 <= access_frequency <= 1.0):
        raise NumericDomainError("utility and access_frequency must lie in [0, 1]")
    return (utility + access_frequency + epsilon) * temperature


def retention(turns_since_access: int, stability: float) -> float:
    if not math.isfinite(stability) or stability <= 0:
        raise NumericDomainError(f"stability must be a positive finite number, got {stability!r}")
    if turns_since_access < 0:
        raise NumericDomainError(f"turns_since_access must be >= 0, got {turns_since_access!r}")
    return math.exp(-turns_since_access / stability)


def clamp_score(x: float) -> float:
    """Clamp a score into the open-interior band used everywhere for utilities."""
    if math.isnan(x):
        return 0.5
    return min(UTILITY_MAX, max(UTILITY_MIN, float(x)))


def access_frequency(access_count: int, half_saturation: float = 5.0) -> float:
    return access_count / (access_count + half_saturation)


def entity_retention(target: Target, current_turn: int, config: EngineConfig) -> float:
    s = stability(target.utility, target.access_frequency, config.epsilon, config.decay_temperature)
    return retention(max(0, current_turn - target.last_access_turn), s)


def reinforce(target: Target, current_turn: int, delta: float, half_saturation: float = 5.0) -> Target:
    """Reset the decay clock and raise utility by ``delta`` (clamped)."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    target.last_access_turn = current_turn
    target.access_count += 1
    target.utility = clamp_score(target.utility + delta)
    target.access_frequency = access_frequency(target.access_count, half_saturation)
    return target


def decay_view(targets: Iterable[Target], current_turn: int, config: EngineConfig) -> dict[str, float]:
    """Retention of every target at ``current_turn``; reads stats, writes nothing."""
    targets = list(targets)
    if not targets:
        return {}
    n = np.array([max(0, current_turn - t.last_access_turn) for t in targets], dtype=np.float64)
    u = np.array([t.utility for t in targets], dtype=np.float64)
    f = np.array([t.access_frequency for t in targets], dtype=np.float64)
    values = retention_batch(n, u, f, config.epsilon, config.decay_temperature)
    return {_ident(t): float(v) for t, v in zip(targets, values)}


def _ident(t: Target) -> str:
    return t.cluster_id if isinstance(t, Cluster) else t.memory_id
