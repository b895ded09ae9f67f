"""Per-turn control cycle: history update, gated read loop, generation, write path."""

from __future__ import annotations

import copy
import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional

from decaymem import prompts
from decaymem.activator import curate, expand_query, retrieve
from decaymem.decay import decay_view
from decaymem.decayer import (SUFFICIENT, GateDecision, UncertaintyAssessment, embedding_uncertainty, gate,
                              judge_uncertainty, rank_clusters)
from decaymem.gateway import Gateway, GatewayError, Role, count_tokens
from decaymem.manager import ClusterIndex, apply_reinforcement, persist
from decaymem.model import EngineConfig, IdFactory, Level, Memory, Turn, WorkingMemory, new_session
from decaymem.recognizer import (EpisodeAccumulator, accumulate_episode, apply_topics, assign_credit,
                                 episode_entry, extract_semantic, propose_topics)
from decaymem.store import Embedder, EmbeddingError, HashEmbedder, MemoryStore

logger = logging.getLogger(__name__)

Observer = Callable[[str, "Session"], None]


class SessionClosed(RuntimeError):
    pass


class SyntheticClock:
    """Deterministic wall clock: each call advances by ``step`` seconds."""

    def __init__(self, start: float = 1_700_000_000.0, step: float = 30.0):
        self.now = start - step
        self.step = step

    def __call__(self) -> float:
        self.now += self.step
        return self.now


@dataclass
class PromptPayload:
    system: str
    user: str
    tokens: int


@dataclass
class TurnReport:
    turn_index: int
    query: str
    response: str
    read_iterations_used: int
    gate_decisions: list[GateDecision]
    retrieved_count: int
    evicted_count: int
    credited_count: int
    token_accounting: list[dict[str, Any]]
    retention_snapshot: list[tuple[str, float]]
    prompt: str = ""
    prompt_tokens: int = 0
    committed_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["retention_snapshot"] = [[eid, r] for eid, r in self.retention_snapshot]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Session:
    """One conversation. Steps are serialized by a session lock.

    A failed step leaves working memory, the episode accumulator, id counter
    and the store exactly as they were before the step.
    """

    def __init__(self, config: EngineConfig, llm: Gateway, embedder: Embedder | None = None,
                 store: MemoryStore | None = None, clock: Callable[[], float] | None = None,
                 observer: Observer | None = None, llm_curation: bool = True,
                 task_metadata: dict[str, Any] | None = None):
        self.config = config.validate()
        self.llm = llm
        self.embedder = embedder or HashEmbedder()
        self.store = store if store is not None else MemoryStore(dim=self.embedder.dim)
        if self.store.dim != self.embedder.dim:
            raise ValueError(f"store dimension {self.store.dim} != embedder dimension {self.embedder.dim}")
        self.clock = clock or time.time
        self.observer = observer
        self.llm_curation = llm_curation
        self.ids = IdFactory(_next_counter(self.store.ids()))
        self.wm: WorkingMemory = new_session(self.config, self.ids)
        self.wm.task_metadata.update(task_metadata or {})
        self.accumulator = EpisodeAccumulator()
        self.cluster_index = ClusterIndex(self.embedder)
        self.turn_index = 0
        self.reports: list[TurnReport] = []
        self.closed = False
        self._lock = threading.Lock()
        self._now = 0.0

    # -- public API -----------------------------------------------------------

    def step(self, query: str) -> TurnReport:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        with self._lock:
            if self.closed:
                raise SessionClosed("session is closed")
            saved = copy.deepcopy((self.wm, self.accumulator, self.ids.counter))
            ledger_mark = len(self.llm.ledger)
            try:
                report = self._step(self.turn_index, query)
            except BaseException:
                self.store.rollback()
                self.wm, self.accumulator, self.ids.counter = saved
                del self.llm.ledger[ledger_mark:]
                raise
            self.turn_index += 1
            self.reports.append(report)
            return report

    def snapshot(self) -> dict[str, Any]:
        """Plain-data view of the working memory and decay state."""
        with self._lock:
            t = self.turn_index
            return {
                "turn_index": t,
                "history": [asdict(h) for h in self.wm.history],
                "buffer_items": list(self.wm.buffer_items),
                "clusters": {cid: asdict(c) for cid, c in sorted(self.wm.clusters.items())},
                "task_metadata": dict(self.wm.task_metadata),
                "store_size": len(self.store),
                "retention": dict(self._retention_snapshot(t)),
            }

    def close(self) -> None:
        with self._lock:
            if self.store.in_turn:
                self.store.rollback()
            self.closed = True

    # -- phases -------------------------------------------------------------

    def _observe(self, phase: str) -> None:
        if self.observer is not None:
            self.observer(phase, self)

    def _step(self, t: int, query: str) -> TurnReport:
        self.llm.turn = t
        self._now = now = self.clock()

        # (1) history
        self.wm.add_turn(Turn(2 * t, "user", query, now))
        self._observe("history")

        # (2) gated read loop
        decisions, retrieved, evicted = self._read_loop(t, query)
        self._observe("read")

        # (3) generation
        payload = self.assemble_prompt(t, now)
        response = self.llm.complete(Role.RESPONSE, payload.system, payload.user).value
        snapshot = {mid: self.store.get(mid) for mid in self.wm.buffer_items}
        self.wm.add_turn(Turn(2 * t + 1, "assistant", response, now))
        self._observe("response")

        # (4) write path
        committed, credited = self._write(t, query, response, snapshot, now)
        self._observe("write")

        usage = [asdict(u) for u in self.llm.usage_for_turn(t)]
        return TurnReport(
            turn_index=t, query=query, response=response, read_iterations_used=len(decisions),
            gate_decisions=decisions, retrieved_count=retrieved, evicted_count=evicted,
            credited_count=credited, token_accounting=usage,
            retention_snapshot=self._retention_snapshot(t),
            prompt=payload.user, prompt_tokens=payload.tokens, committed_ids=committed,
        )

    def _judge_views(self, t: int, query: str, items: list[Memory]) -> Optional[list[UncertaintyAssessment]]:
        """Assess every resident cluster (or the whole buffer without L1); None if the judge is unreachable."""
        views: list[tuple[Any, list[Memory]]] = []
        if self.config.has(Level.L1) and self.wm.clusters:
            for cid in sorted(self.wm.clusters):
                views.append((self.wm.clusters[cid], [m for m in items if m.cluster_id == cid]))
        else:
            views.append((None, items))
        out = []
        for cluster, cached in views:
            try:
                out.append(judge_uncertainty(query, cluster, cached, self.llm))
            except GatewayError as e:
                logger.warning("judge unavailable: %s", e)
        return out or None

    def _read_loop(self, t: int, query: str) -> tuple[list[GateDecision], int, int]:
        cfg = self.config
        decisions: list[GateDecision] = []
        retrieved = evicted = 0
        query_vec = None
        for r in range(1, cfg.max_read_iterations + 1):
            self.wm.round = r
            items = [self.store.get(mid) for mid in self.wm.buffer_items]
            assessments = self._judge_views(t, query, items)
            judge_signal = None
            if assessments is not None:
                judge_signal = any(a.sufficiency != SUFFICIENT or a.uncertainty_score >= cfg.judge_threshold
                                   for a in assessments)
            emb_signal = None
            if items:
                try:
                    if query_vec is None:
                        query_vec = self.embedder.embed(query)
                    emb_signal = embedding_uncertainty(
                        query_vec, [self.store.embedding(m.memory_id) for m in items], cfg.embedding_threshold)[1]
                except EmbeddingError as e:
                    logger.warning("embedding signal unavailable: %s", e)
            decision = gate(r, self.wm, judge_signal, emb_signal)
            decisions.append(decision)
            all_sufficient = bool(assessments) and all(
                a.sufficiency == SUFFICIENT and not a.fallback for a in assessments)
            if not decision.triggered or (items and all_sufficient):
                break
            uncertain = [a for a in assessments or [] if a.sufficiency != SUFFICIENT]
            names = {cid: c.name for cid, c in self.wm.clusters.items()}
            dag = expand_query(query, uncertain, self.llm, names)
            candidates = retrieve(dag, self.store, self.embedder, cfg)
            plan = curate(self.wm, candidates, self.store, t, cfg,
                          curator=self.llm if self.llm_curation else None)
            retrieved += len(plan.added)
            evicted += len(plan.evicted)
            self._observe("curation")
        return decisions, retrieved, evicted

    def _write(self, t: int, query: str, response: str, snapshot: dict[str, Memory],
               now: float) -> tuple[list[str], int]:
        cfg = self.config
        facts = extract_semantic(query, response, self.llm) if cfg.has(Level.L2) else []
        episode = None
        if cfg.has(Level.L3):
            entry = episode_entry(query, response, self.llm)
            episode = accumulate_episode(self.accumulator, t, entry, cfg.episode_length, self.llm)
        used, scores, _criteria = assign_credit(response, snapshot, self.llm)
        if cfg.has(Level.L1):
            proposals = propose_topics(query, response, self.wm.clusters, self.llm)
            apply_topics(self.wm, proposals, cfg.dynamic_topics, t, self.ids)
        self.store.begin(t)
        committed = persist(facts, episode, self.wm, self.store, self.embedder, cfg, self.ids, t, now,
                            index=self.cluster_index)
        apply_reinforcement(used, scores, t, cfg, self.store, self.wm)
        self.store.commit()
        return committed, len(used)

    # -- prompt ------------------------------------------------------------------

    def assemble_prompt(self, t: int | None = None, now: float | None = None) -> PromptPayload:
        """Generation prompt: rules first, then topics, chronological memories, task, conversation."""
        t = self.turn_index if t is None else t
        now = self._now if now is None else now
        items = [self.store.get(mid) for mid in self.wm.buffer_items]
        retention = decay_view(items, t, self.config)
        items.sort(key=lambda m: (m.created_at, m.created_turn, m.memory_id))
        rules = [m for m in items if m.memory_type.value == "rule"]
        others = [m for m in items if m.memory_type.value != "rule"]

        def render(m: Memory) -> str:
            kind = "episode" if m.level is Level.L3 else m.memory_type.value
            return (f"- [{m.memory_id}] ({kind}) {m.text} "
                    f"| elapsed_time_seconds={max(0.0, now - m.created_at):.0f} "
                    f"decay_score={retention[m.memory_id]:.3f}")

        parts = []
        if rules:
            parts.append("## Behavioral rules (apply before anything else)")
            parts += [render(m) for m in rules]
        if self.config.has(Level.L1) and self.wm.clusters:
            parts.append("## Topics")
            for cid, r, u in rank_clusters(list(self.wm.clusters.values()), t, self.config):
                c = self.wm.clusters[cid]
                parts.append(f"- {c.name}: {c.summary} (retention={r:.3f}, utility={u:.2f})")
                parts += [f"  * {p}" for p in c.procedural]
        parts.append("## Memories (oldest first, most recent last)")
        parts += [render(m) for m in others] or ["- (none)"]
        if self.wm.task_metadata:
            parts.append("## Task")
            parts += [f"- {k}: {v}" for k, v in sorted(self.wm.task_metadata.items())]
        parts.append("## Conversation")
        parts += [f"{h.role}: {h.text}" for h in self.wm.history]
        user = "\n".join(parts)
        system = prompts.system_prompt("response")
        return PromptPayload(system, user, count_tokens(system) + count_tokens(user))

    def _retention_snapshot(self, t: int) -> list[tuple[str, float]]:
        entities = list(self.wm.clusters.values()) + [self.store.get(mid) for mid in self.wm.buffer_items]
        view = decay_view(entities, t, self.config)
        return sorted(view.items())


def _next_counter(existing_ids: list[str]) -> int:
    highest = 0
    for mid in existing_ids:
        digits = mid.lstrip("abcdefghijklmnopqrstuvwxyz")
        if digits.isdigit():
            highest = max(highest, int(digits))
    return highest + 1


def open_session(config: EngineConfig, llm: Gateway, **kwargs) -> Session:
    return Session(config, llm, **kwargs)
