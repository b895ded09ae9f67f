"""Read-path gatekeeper: uncertainty signals, retrieval gate, cluster ranking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from decaymem import prompts
from decaymem.decay import clamp_score, entity_retention
from decaymem.gateway import Gateway, Role, SchemaViolation
from decaymem.kernels import cosine_scores
from decaymem.model import Cluster, EngineConfig, Memory, SemanticMemory, WorkingMemory

logger = logging.getLogger(__name__)

SUFFICIENT, PARTIAL, INSUFFICIENT = "sufficient", "partial", "insufficient"
GLOBAL_VIEW = "*"


@dataclass
class UncertaintyAssessment:
    cluster_id: str
    utility_score: float
    uncertainty_score: float
    sufficiency: str
    retrieval_level: str
    explore: list[str] = field(default_factory=list)
    avoid: list[str] = field(default_factory=list)
    fallback: bool = False


@dataclass
class GateDecision:
    triggered: bool
    reason: str
    judge_uncertain: Optional[bool]
    embedding_uncertain: Optional[bool]
    round: int


def _render_items(items: Sequence[Memory]) -> str:
    facts = [m for m in items if isinstance(m, SemanticMemory)]
    episodes = [m for m in items if not isinstance(m, SemanticMemory)]
    lines = ["Facts:"]
    lines += [f"- [{m.memory_id}] ({m.memory_type.value}) {m.text}" for m in facts] or ["- (none)"]
    lines.append("Experiences:")
    lines += [f"- [{m.memory_id}] {m.text}" for m in episodes] or ["- (none)"]
    return "\n".join(lines)


def judge_uncertainty(query: str, cluster: Cluster | None, cached_items: Sequence[Memory],
                      judge: Gateway) -> UncertaintyAssessment:
    """Ask the judge whether ``cluster`` (or the whole buffer if None) answers ``query``.

    Transport failures propagate as GatewayError; a reply that stays invalid
    after the repair retry yields the conservative fallback assessment.
    """
    cid = cluster.cluster_id if cluster is not None else GLOBAL_VIEW
    if cluster is not None:
        head = f"Cluster: {cluster.name}\nSummary: {cluster.summary}\nProcedures:\n" + (
            "\n".join(f"- {p}" for p in cluster.procedural) or "- (none)")
    else:
        head = "Cluster: (whole buffer)"
    payload = f"Query: {query}\n\n{head}\n\n{_render_items(cached_items)}"
    try:
        reply = judge.complete(Role.JUDGE, prompts.system_prompt("judge"), payload).value
    except SchemaViolation:
        logger.warning("judge reply unusable for cluster %s; assuming insufficient", cid)
        return UncertaintyAssessment(cid, 0.5, 0.85, INSUFFICIENT, "memory_manager_retrieval", fallback=True)
    level = reply.retrieval_level
    if reply.sufficiency == SUFFICIENT:
        level = "cluster_summaries"
    return UncertaintyAssessment(
        cluster_id=cid,
        utility_score=clamp_score(reply.utility_score),
        uncertainty_score=clamp_score(reply.uncertainty_score),
        sufficiency=reply.sufficiency,
        retrieval_level=level,
        explore=list(reply.explore),
        avoid=list(reply.avoid),
    )


def embedding_uncertainty(query_embedding: np.ndarray, item_embeddings: Sequence[np.ndarray] | np.ndarray,
                          threshold: float) -> tuple[float, bool]:
    """``(1 - mean cosine, mean cosine < threshold)`` between the query and cached items."""
    items = np.asarray(item_embeddings, dtype=np.float64)
    if items.ndim != 2 or items.shape[0] == 0:
        raise ValueError("embedding_uncertainty needs at least one cached item")
    mean = float(np.sum(cosine_scores(items, np.asarray(query_embedding, dtype=np.float64))) / items.shape[0])
    score = min(1.0, max(0.0, 1.0 - mean))
    return score, mean < threshold


def gate(round: int, buffer: WorkingMemory | Sequence[str], judge_uncertain: Optional[bool],
         embedding_uncertain: Optional[bool]) -> GateDecision:
    """Retrieval gate: empty buffer always triggers; round 1 ORs the signals, later rounds AND them.

    A signal of ``None`` means its source failed; the other signal then
    decides alone. With both missing nothing is triggered.
    """
    if round < 1:
        raise ValueError("round starts at 1")
    items = buffer.buffer_items if isinstance(buffer, WorkingMemory) else buffer
    if not items:
        return GateDecision(True, "empty_buffer", judge_uncertain, embedding_uncertain, round)
    signals = [s for s in (judge_uncertain, embedding_uncertain) if s is not None]
    if not signals:
        return GateDecision(False, "none", judge_uncertain, embedding_uncertain, round)
    triggered = any(signals) if round == 1 else all(signals)
    if not triggered:
        reason = "none"
    elif judge_uncertain and embedding_uncertain:
        reason = "both_signals"
    elif judge_uncertain:
        reason = "judge_signal"
    else:
        reason = "embedding_signal"
    return GateDecision(triggered, reason, judge_uncertain, embedding_uncertain, round)


def rank_clusters(clusters: Sequence[Cluster], current_turn: int,
                  config: EngineConfig) -> list[tuple[str, float, float]]:
    """Clusters by descending retention x utility; ties by recency, then id."""
    scored = []
    for c in clusters:
        r = entity_retention(c, current_turn, config)
        scored.append((-(r * c.utility), -c.last_access_turn, c.cluster_id, r, c.utility))
    scored.sort()
    return [(cid, r, u) for _, _, cid, r, u in scored]


def combined_uncertainty(assessment: UncertaintyAssessment | None, embedding_score: float | None) -> float:
    """Scalar uncertainty exposed downstream: the judge's score if present, else the embedding one."""
    if assessment is not None and not assessment.fallback:
        return assessment.uncertainty_score
    if embedding_score is not None:
        return embedding_score
    return assessment.uncertainty_score if assessment is not None else 0.85
