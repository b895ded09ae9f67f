"""Domain types shared across the engine."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, ClassVar, Union


class ConfigError(ValueError):
    pass


class MemoryType(str, Enum):
    FACT = "fact"
    RULE = "rule"
    PREFERENCE = "preference"


class Level(str, Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"


# Layer ablation modes: which levels are enabled.
MODES: dict[str, frozenset[Level]] = {
    "M1": frozenset({Level.L2}),
    "M2": frozenset({Level.L3}),
    "M3": frozenset({Level.L1, Level.L2}),
    "M4": frozenset({Level.L2, Level.L3}),
    "M5": frozenset({Level.L1, Level.L2, Level.L3}),
}


@dataclass
class Cluster:
    cluster_id: str
    name: str
    summary: str
    procedural: list[str] = field(default_factory=list)
    utility: float = 0.5
    access_frequency: float = 0.0
    last_access_turn: int = 0
    creation_turn: int = 0
    access_count: int = 0


@dataclass
class SemanticMemory:
    memory_id: str
    content: str
    memory_type: MemoryType
    created_turn: int
    created_at: float
    cluster_id: str
    utility: float = 0.5
    access_frequency: float = 0.0
    last_access_turn: int = -1
    access_count: int = 0
    linked_episodes: list[str] = field(default_factory=list)
    source: str = "user"
    tags: list[str] = field(default_factory=list)
    reward: float | None = None

    level: ClassVar[Level] = Level.L2

    def __post_init__(self):
        if not self.content or not self.content.strip():
            raise ValueError("semantic memory content must be non-empty")
        self.memory_type = MemoryType(self.memory_type)
        if self.last_access_turn < 0:
            self.last_access_turn = self.created_turn

    @property
    def text(self) -> str:
        return self.content

    @property
    def links(self) -> list[str]:
        return self.linked_episodes


@dataclass
class EpisodicMemory:
    memory_id: str
    preemptive_text: str
    raw_span: tuple[int, int]
    created_turn: int
    created_at: float
    cluster_id: str
    utility: float = 0.5
    access_frequency: float = 0.0
    last_access_turn: int = -1
    access_count: int = 0
    linked_facts: list[str] = field(default_factory=list)
    complete: bool = True
    raw_fallback: bool = False
    reward: float | None = None

    level: ClassVar[Level] = Level.L3
    # Episodes carry no type tag; they render and evict as plain content.
    memory_type: ClassVar[MemoryType] = MemoryType.FACT

    def __post_init__(self):
        self.raw_span = (int(self.raw_span[0]), int(self.raw_span[1]))
        if self.last_access_turn < 0:
            self.last_access_turn = self.created_turn

    @property
    def text(self) -> str:
        return self.preemptive_text

    @property
    def links(self) -> list[str]:
        return self.linked_facts


Memory = Union[SemanticMemory, EpisodicMemory]

# Fields that change after a record is first committed.
MUTABLE_FIELDS = ("utility", "access_frequency", "access_count", "last_access_turn")


def memory_to_dict(mem: Memory) -> dict[str, Any]:
    d = asdict(mem)
    if isinstance(mem, SemanticMemory):
        d["memory_type"] = mem.memory_type.value
    else:
        d["raw_span"] = list(mem.raw_span)
    return d


def memory_from_dict(level: Level | str, d: dict[str, Any]) -> Memory:
    level = Level(level)
    cls = SemanticMemory if level is Level.L2 else EpisodicMemory
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Turn:
    turn_index: int
    role: str
    text: str
    timestamp: float

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")


@dataclass
class EngineConfig:
    buffer_capacity: int = 90
    decay_temperature: float = 10.0
    epsilon: float = 0.1
    window_k: int = 10
    episode_length: int = 4
    max_read_iterations: int = 3
    dynamic_topics: bool = True
    memory_linking: bool = True
    enabled_levels: frozenset[Level] = frozenset({Level.L1, Level.L2, Level.L3})
    initial_topics: list[tuple[str, str]] = field(default_factory=list)
    reinforcement_delta: float = 0.1
    eviction_threshold: float = 0.05
    # Read-path thresholds not fixed by the method itself.
    embedding_threshold: float = 0.5
    judge_threshold: float = 0.5
    k_per_query: int = 5
    cluster_floor: float = 0.3
    frequency_half_saturation: float = 5.0

    def __post_init__(self):
        self.enabled_levels = frozenset(Level(x) for x in self.enabled_levels)
        self.initial_topics = [(str(n), str(s)) for n, s in self.initial_topics]

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "EngineConfig":
        try:
            levels = MODES[mode.upper()]
        except KeyError:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}") from None
        return cls(enabled_levels=levels, **overrides)

    def validate(self) -> "EngineConfig":
        positive_ints = ("buffer_capacity", "window_k", "episode_length", "max_read_iterations", "k_per_query")
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("decay_temperature", "epsilon", "reinforcement_delta", "frequency_half_saturation"):
            v = getattr(self, name)
            if not (v > 0 and v != float("inf")):
                raise ConfigError(f"{name} must be > 0, got {v!r}")
        if not 0 < self.eviction_threshold < 1:
            raise ConfigError(f"eviction_threshold must be in (0, 1), got {self.eviction_threshold!r}")
        if not self.enabled_levels:
            raise ConfigError("enabled_levels must not be empty")
        if not self.initial_topics and not self.dynamic_topics:
            raise ConfigError("static topics need at least one initial topic")
        return self

    def has(self, level: Level) -> bool:
        return level in self.enabled_levels

    @property
    def linking_active(self) -> bool:
        return self.memory_linking and Level.L2 in self.enabled_levels and Level.L3 in self.enabled_levels


class IdFactory:
    """Monotone, zero-padded ids so lexicographic order is creation order."""

    def __init__(self, start: int = 1):
        self.counter = start

    def next(self, prefix: str) -> str:
        value = self.counter
        self.counter += 1
        return f"{prefix}{value:08d}"


@dataclass
class WorkingMemory:
    window_k: int
    buffer_capacity: int
    history: deque = field(default_factory=deque)
    buffer_items: list[str] = field(default_factory=list)
    clusters: dict[str, Cluster] = field(default_factory=dict)
    task_metadata: dict[str, Any] = field(default_factory=dict)
    round: int = 0

    def add_turn(self, turn: Turn) -> None:
        self.history.append(turn)
        while len(self.history) > self.window_k:
            self.history.popleft()

    def cluster_by_name(self, name: str) -> Cluster | None:
        key = name.strip().lower()
        for c in self.clusters.values():
            if c.name.strip().lower() == key:
                return c
        return None

    def check(self) -> None:
        """Raise AssertionError if a working-memory bound is violated."""
        assert len(self.history) <= self.window_k, "history exceeds window"
        assert len(self.buffer_items) <= self.buffer_capacity, "buffer exceeds capacity"
        assert len(set(self.buffer_items)) == len(self.buffer_items), "duplicate buffer ids"


def new_session(config: EngineConfig, ids: IdFactory | None = None) -> WorkingMemory:
    """Fresh working memory with one resident cluster per initial topic."""
    config.validate()
    ids = ids or IdFactory()
    wm = WorkingMemory(window_k=config.window_k, buffer_capacity=config.buffer_capacity)
    for name, summary in config.initial_topics:
        cid = ids.next("c")
        wm.clusters[cid] = Cluster(cluster_id=cid, name=name, summary=summary)
    return wm
