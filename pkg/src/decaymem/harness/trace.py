"""Synthetic decay traces for a grid of temperatures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from decaymem.kernels import simulate_population
from decaymem.model import EngineConfig

HEADER = ("T", "t", "entity_id", "level", "retention", "n", "utility", "access_frequency", "epsilon")
DEFAULT_TEMPERATURES = (1.0, 3.0, 5.0, 10.0, 20.0, 50.0)


def reinforcement_mask(turns: int, schedule: str | Iterable[int] | None) -> np.ndarray:
    """Boolean access mask over ``t = 0..turns``; ``"every"`` reinforces each turn, None never."""
    mask = np.zeros(turns + 1, dtype=np.bool_)
    if schedule is None:
        return mask
    if isinstance(schedule, str):
        if schedule != "every":
            raise ValueError(f"unknown schedule {schedule!r}")
        mask[:] = True
        return mask
    for t in schedule:
        if not 0 <= int(t) <= turns:
            raise ValueError(f"reinforcement turn {t} outside 0..{turns}")
        mask[int(t)] = True
    return mask


@dataclass
class TraceTable:
    rows: list[tuple] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HEADER)
        for T, t, eid, level, r, n, u, f, eps in self.rows:
            writer.writerow((f"{T:g}", t, eid, level, repr(r), n, repr(u), repr(f), repr(eps)))
        return buf.getvalue()

    def mean_retention(self, T: float, t: int) -> float:
        vals = [r[4] for r in self.rows if r[0] == T and r[1] == t]
        if not vals:
            raise KeyError(f"no rows for T={T}, t={t}")
        return float(np.mean(vals))


def trace_decay(temperatures: Sequence[float] = DEFAULT_TEMPERATURES, turns: int = 150,
                schedule: str | Iterable[int] | None = (20,), config: EngineConfig | None = None,
                entities: int | None = None, arrival_every: int = 1, utilities: Sequence[float] | None = None,
                seed: int = 0, sample_times: Iterable[int] | None = None) -> TraceTable:
    """Simulate a memory population under an access schedule for each temperature.

    One memory arrives every ``arrival_every`` turns (``entities`` of them,
    default enough to cover the horizon) with initial utility drawn from a
    seeded uniform on [0.05, 0.95] unless ``utilities`` is given. An access
    event reinforces every memory alive at that turn. Rows are emitted at
    ``sample_times`` (default every 10 turns plus 50/100/150 when in range).
    """
    if not temperatures:
        raise ValueError("temperatures must be non-empty")
    if turns < 1:
        raise ValueError("turns must be >= 1")
    config = config or EngineConfig()
    n_ent = entities if entities is not None else turns // arrival_every + 1
    created = np.arange(n_ent, dtype=np.int64) * arrival_every
    if utilities is not None:
        if len(utilities) != n_ent:
            raise ValueError("utilities must give one value per entity")
        u0 = np.asarray(utilities, dtype=np.float64)
    else:
        u0 = np.random.default_rng(seed).uniform(0.05, 0.95, n_ent)
    mask = reinforcement_mask(turns, schedule)
    if sample_times is None:
        sample_times = sorted(set(range(0, turns + 1, 10)) | {t for t in (50, 100, 150) if t <= turns})
    samples = sorted(set(int(t) for t in sample_times if 0 <= int(t) <= turns))

    table = TraceTable()
    for T in temperatures:
        if T <= 0:
            raise ValueError("temperatures must be > 0")
        ret, elapsed, util, freq = simulate_population(created, u0, mask, float(T), config.epsilon,
                                                       config.reinforcement_delta,
                                                       config.frequency_half_saturation)
        for t in samples:
            for i in range(n_ent):
                if created[i] > t:
                    break
                table.rows.append((float(T), t, f"e{i:04d}", "L2", float(ret[t, i]), int(elapsed[t, i]),
                                   float(util[t, i]), float(freq[t, i]), config.epsilon))
    return table
