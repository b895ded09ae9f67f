"""Write-path persister: commits new memories and links, applies reinforcement."""

from __future__ import annotations

import logging
from typing import Iterable, Mapping

import numpy as np

from decaymem.decay import reinforce
from decaymem.model import (Cluster, EngineConfig, EpisodicMemory, IdFactory, Level, SemanticMemory,
                            WorkingMemory)
from decaymem.recognizer import CompletedEpisode, Extracted
from decaymem.store import Embedder, MemoryStore

logger = logging.getLogger(__name__)

UNCLUSTERED = "unclustered"


class ClusterIndex:
    """Embeddings of cluster name + summary, recomputed only when the text changes."""

    def __init__(self, embedder: Embedder):
        self.embedder = embedder
        self._cache: dict[str, tuple[str, np.ndarray]] = {}

    def vector(self, cluster: Cluster) -> np.ndarray:
        text = f"{cluster.name} {cluster.summary}"
        hit = self._cache.get(cluster.cluster_id)
        if hit is None or hit[0] != text:
            hit = (text, self.embedder.embed(text))
            self._cache[cluster.cluster_id] = hit
        return hit[1]


def assign_cluster(embedding: np.ndarray, wm: WorkingMemory, index: ClusterIndex, config: EngineConfig,
                   turn: int, ids: IdFactory) -> str:
    """Best cluster by cosine against its summary.

    Below the similarity floor a dynamic session files the memory under a
    lazily created ``unclustered`` cluster; a static session keeps its fixed
    cluster set and takes the best match anyway.
    """
    best_id, best_sim = None, -np.inf
    for cid in sorted(wm.clusters):
        c = wm.clusters[cid]
        if c.name.strip().lower() == UNCLUSTERED:
            continue
        sim = float(np.dot(index.vector(c), embedding))
        if sim > best_sim:
            best_id, best_sim = cid, sim
    if best_id is not None and (best_sim >= config.cluster_floor or not config.dynamic_topics):
        return best_id
    fallback = wm.cluster_by_name(UNCLUSTERED)
    if fallback is None:
        cid = ids.next("c")
        fallback = Cluster(cluster_id=cid, name=UNCLUSTERED, summary="memories matching no topic",
                           last_access_turn=turn, creation_turn=turn)
        wm.clusters[cid] = fallback
    return fallback.cluster_id


def persist(facts: Iterable[Extracted], episode: CompletedEpisode | None, wm: WorkingMemory, store: MemoryStore,
            embedder: Embedder, config: EngineConfig, ids: IdFactory, turn: int, now: float,
            index: ClusterIndex | None = None, source: str = "user") -> list[str]:
    """Append this turn's facts (L2) and completed episode (L3) to the open store turn.

    With linking active, the episode is linked both ways to every L2 record
    created within its turn span. Disabled levels are skipped. Returns the
    committed ids in creation order.
    """
    index = index or ClusterIndex(embedder)
    new_mems, vectors = [], []
    if config.has(Level.L2):
        for fact in facts:
            vec = embedder.embed(fact.content)
            mem = SemanticMemory(memory_id=ids.next("m"), content=fact.content, memory_type=fact.memory_type,
                                 created_turn=turn, created_at=now,
                                 cluster_id=assign_cluster(vec, wm, index, config, turn, ids),
                                 source=source, tags=list(fact.tags))
            new_mems.append(mem)
            vectors.append(vec)
    if episode is not None and config.has(Level.L3):
        vec = embedder.embed(episode.text)
        ep_mem = EpisodicMemory(memory_id=ids.next("m"), preemptive_text=episode.text, raw_span=episode.raw_span,
                                created_turn=turn, created_at=now,
                                cluster_id=assign_cluster(vec, wm, index, config, turn, ids),
                                complete=episode.raw_span[1] - episode.raw_span[0] + 1 == config.episode_length,
                                raw_fallback=episode.raw_fallback)
        if config.linking_active:
            start, end = episode.raw_span
            earlier = [r.payload for r in _facts_in_span(store, start, end)]
            current = [m for m in new_mems if isinstance(m, SemanticMemory)]
            for fact in earlier:
                store.touch(fact.memory_id).linked_episodes.append(ep_mem.memory_id)
                ep_mem.linked_facts.append(fact.memory_id)
            for fact in current:
                fact.linked_episodes.append(ep_mem.memory_id)
                ep_mem.linked_facts.append(fact.memory_id)
        new_mems.append(ep_mem)
        vectors.append(vec)
    if not new_mems:
        return []
    return store.append(new_mems, vectors)


def _facts_in_span(store: MemoryStore, start: int, end: int):
    # created_turn is monotone along the log, so walk back until we pass ``start``
    out = []
    for rec in reversed(store.records()):
        if rec.payload.created_turn < start:
            break
        if rec.level is Level.L2 and rec.payload.created_turn <= end:
            out.append(rec)
    return out[::-1]


def apply_reinforcement(used_ids: Iterable[str], utility_scores: Mapping[str, float], turn: int,
                        config: EngineConfig, store: MemoryStore, wm: WorkingMemory) -> list[str]:
    """Reinforce credited memories, their clusters once each, and (with linking) their partners at half delta.

    Assessor scores are kept as ``reward`` metadata; utility moves only by the
    fixed delta. Returns ids of every entity whose stats changed.
    """
    delta, half = config.reinforcement_delta, config.frequency_half_saturation
    credited: list[str] = []
    for mid in used_ids:
        if mid not in store:
            logger.warning("credited id %s is not in the store; skipped", mid)
            continue
        if mid not in credited:
            credited.append(mid)
    changed: list[str] = []
    clusters: list[str] = []
    for mid in credited:
        mem = store.touch(mid)
        reinforce(mem, turn, delta, half)
        if mid in utility_scores:
            mem.reward = float(utility_scores[mid])
        changed.append(mid)
        if mem.cluster_id in wm.clusters and mem.cluster_id not in clusters:
            clusters.append(mem.cluster_id)
    for cid in clusters:
        reinforce(wm.clusters[cid], turn, delta, half)
        changed.append(cid)
    if config.linking_active:
        partners: list[str] = []
        for mid in credited:
            for p in store.get(mid).links:
                if p not in credited and p not in partners and p in store:
                    partners.append(p)
        for p in partners:
            reinforce(store.touch(p), turn, delta / 2, half)
            changed.append(p)
    return changed
