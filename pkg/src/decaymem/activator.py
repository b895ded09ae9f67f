"""Read-path retriever: query DAG expansion, global search, buffer curation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from decaymem import prompts
from decaymem.decay import decay_view
from decaymem.decayer import UncertaintyAssessment
from decaymem.gateway import Gateway, GatewayError, Role, SchemaViolation
from decaymem.model import EngineConfig, Level, Memory, MemoryType, SemanticMemory, WorkingMemory
from decaymem.store import EmbeddingError, Embedder, MemoryStore

logger = logging.getLogger(__name__)

RELATIONSHIPS = ("depends_on", "refines", "complements")
MAX_EXPANSIONS_PER_CLUSTER = 5


@dataclass(frozen=True)
class QueryNode:
    node_id: str
    text: str
    query_type: str = "semantic"
    target_cluster: Optional[str] = None


@dataclass
class QueryDAG:
    nodes: list[QueryNode]
    edges: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def root(self) -> QueryNode:
        return self.nodes[0]

    def is_acyclic(self) -> bool:
        adj: dict[str, list[str]] = {n.node_id: [] for n in self.nodes}
        for a, b, _ in self.edges:
            adj[a].append(b)
        state: dict[str, int] = {}

        def visit(u: str) -> bool:
            state[u] = 1
            for v in adj[u]:
                if state.get(v) == 1 or (v not in state and not visit(v)):
                    return False
            state[u] = 2
            return True

        return all(visit(n) for n in adj if n not in state)


def _reaches(adj: dict[str, set[str]], start: str, goal: str) -> bool:
    stack, seen = [start], set()
    while stack:
        u = stack.pop()
        if u == goal:
            return True
        if u not in seen:
            seen.add(u)
            stack.extend(adj[u])
    return False


def build_dag(query: str, planned_nodes, planned_edges, max_expansions: int) -> QueryDAG:
    """Validate planner output into a DAG rooted at the verbatim query ``q0``.

    Empty and duplicate texts are dropped, expansions are capped, and edges
    that point at unknown nodes or would close a cycle are discarded in the
    order given.
    """
    nodes = [QueryNode("q0", query, "semantic")]
    seen_text = {query.strip().casefold()}
    seen_ids = {"q0"}
    for pn in planned_nodes:
        text = pn.text.strip()
        if pn.id == "q0" or not text or text.casefold() in seen_text:
            continue
        if len(nodes) - 1 >= max_expansions:
            break
        node_id = pn.id if pn.id not in seen_ids else f"{pn.id}_{len(nodes)}"
        nodes.append(QueryNode(node_id, text, pn.query_type, pn.target_cluster))
        seen_text.add(text.casefold())
        seen_ids.add(node_id)
    adj: dict[str, set[str]] = {n.node_id: set() for n in nodes}
    edges = []
    for a, b, rel in planned_edges:
        if a not in adj or b not in adj or a == b or rel not in RELATIONSHIPS or b in adj[a]:
            continue
        if _reaches(adj, b, a):
            logger.info("dropping edge %s->%s: would create a cycle", a, b)
            continue
        adj[a].add(b)
        edges.append((a, b, rel))
    return QueryDAG(nodes, edges)


def expand_query(query: str, uncertain: Sequence[UncertaintyAssessment], planner: Gateway | None,
                 cluster_names: dict[str, str] | None = None) -> QueryDAG:
    """Decompose ``query`` into typed sub-queries; degrades to ``{q0}`` if the planner fails."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    cap = MAX_EXPANSIONS_PER_CLUSTER * max(1, len(uncertain))
    if planner is None:
        return QueryDAG([QueryNode("q0", query, "semantic")])
    names = cluster_names or {}
    lines = [f"Query: {query}", "Uncertain clusters:"]
    for a in uncertain:
        lines.append(f"- {names.get(a.cluster_id, a.cluster_id)} (uncertainty {a.uncertainty_score:.2f},"
                     f" {a.sufficiency})")
    if not uncertain:
        lines.append("- (none)")
    try:
        reply = planner.complete(Role.PLANNER, prompts.system_prompt("planner"), "\n".join(lines)).value
    except (GatewayError, SchemaViolation) as e:
        logger.warning("planner unavailable (%s); searching with the original query only", e)
        return QueryDAG([QueryNode("q0", query, "semantic")])
    return build_dag(query, reply.queries, [(e.source, e.target, e.relationship) for e in reply.edges], cap)


@dataclass(frozen=True)
class Candidate:
    memory_id: str
    similarity: float
    source_node: str
    via_link: bool = False


def _node_levels(node: QueryNode, config: EngineConfig) -> list[Level]:
    if node.node_id == "q0":
        wanted = [Level.L2, Level.L3]
    else:
        wanted = [Level.L2] if node.query_type == "semantic" else [Level.L3]
    return [lv for lv in wanted if config.has(lv)]


def retrieve(dag: QueryDAG, store: MemoryStore, embedder: Embedder, config: EngineConfig,
             k_per_query: int | None = None, memory_linking: bool | None = None) -> list[Candidate]:
    """Global top-k search per DAG node, level-filtered by query type.

    The root ``q0`` searches every enabled level and, with linking on, also
    pulls the linked L2/L3 partners of its hits.
    """
    k = config.k_per_query if k_per_query is None else k_per_query
    linking = config.linking_active if memory_linking is None else memory_linking
    best: dict[str, Candidate] = {}
    root_hits: list[str] = []
    root_vec = None
    for node in dag.nodes:
        levels = _node_levels(node, config)
        if not levels or len(store) == 0:
            continue
        try:
            vec = embedder.embed(node.text)
        except EmbeddingError as e:
            logger.warning("embedding failed for node %s: %s", node.node_id, e)
            continue
        if node.node_id == "q0":
            root_vec = vec
        for level in levels:
            for mid, sim in store.search(vec, level, k):
                if node.node_id == "q0":
                    root_hits.append(mid)
                prev = best.get(mid)
                if prev is None or sim > prev.similarity:
                    best[mid] = Candidate(mid, sim, node.node_id)
    if linking and root_vec is not None:
        for mid in root_hits:
            for partner in store.get(mid).links:
                if partner in best or partner not in store:
                    continue
                if not config.has(store.record(partner).level):
                    continue
                sim = float(np.dot(store.embedding(partner), root_vec))
                best[partner] = Candidate(partner, sim, "q0", via_link=True)
    return sorted(best.values(), key=lambda c: (-c.similarity, c.memory_id))


@dataclass
class CurationPlan:
    kept: list[str] = field(default_factory=list)
    added: list[str] = field(default_factory=list)
    evicted: list[str] = field(default_factory=list)
    resolutions: list[tuple[str, str, str]] = field(default_factory=list)
    llm: bool = False


def _is_rule(m: Memory) -> bool:
    return isinstance(m, SemanticMemory) and m.memory_type is MemoryType.RULE


def _attribute(m: Memory) -> str | None:
    if isinstance(m, SemanticMemory):
        for t in m.tags:
            if t.startswith("attr:"):
                return t[5:].strip().casefold()
    return None


def curate(wm: WorkingMemory, candidates: Sequence[Candidate], store: MemoryStore, current_turn: int,
           config: EngineConfig, curator: Gateway | None = None) -> CurationPlan:
    """Merge ``candidates`` into the buffer, keep it within capacity, and apply the result to ``wm``.

    Evicted items only leave the buffer; the store is never touched. Rule
    memories already in the buffer are never evicted.
    """
    buffer_ids = list(wm.buffer_items)
    in_buffer = set(buffer_ids)
    sim = {c.memory_id: c.similarity for c in candidates}
    fresh = [c.memory_id for c in candidates if c.memory_id not in in_buffer]
    pool = {mid: store.get(mid) for mid in buffer_ids + fresh}
    retention = decay_view(pool.values(), current_turn, config)

    plan = None
    if curator is not None and (fresh or buffer_ids):
        plan = _llm_plan(wm, buffer_ids, fresh, pool, retention, sim, config, curator)
    if plan is None:
        plan = _rule_plan(buffer_ids, fresh, pool, retention, sim, config)
    _enforce_capacity(plan, buffer_ids, pool, retention, sim, config.buffer_capacity)

    evicted = set(plan.evicted)
    plan.kept = [mid for mid in buffer_ids if mid not in evicted]
    plan.added = sorted(set(plan.added), key=lambda m: (-sim.get(m, 0.0), m))
    wm.buffer_items = plan.kept + plan.added
    return plan


def _rule_plan(buffer_ids, fresh, pool, retention, sim, config) -> CurationPlan:
    in_buffer = set(buffer_ids)
    dropped: set[str] = set()
    resolutions = []

    def drop(mid: str) -> bool:
        if mid in in_buffer and _is_rule(pool[mid]):
            return False
        dropped.add(mid)
        return True

    # exact duplicates: keep the higher-utility copy
    by_text: dict[str, list[str]] = {}
    for mid, m in pool.items():
        by_text.setdefault(m.text.strip(), []).append(mid)
    for group in by_text.values():
        if len(group) < 2:
            continue
        protected = [g for g in group if g in in_buffer and _is_rule(pool[g])]
        winner = protected[0] if protected else min(
            group, key=lambda g: (-pool[g].utility, -pool[g].created_turn, g))
        for g in group:
            if g != winner and g not in protected:
                drop(g)

    # same attribute, different values: the newer memory wins
    by_attr: dict[str, list[str]] = {}
    for mid, m in pool.items():
        key = _attribute(m)
        if key is not None and mid not in dropped:
            by_attr.setdefault(key, []).append(mid)
    for group in by_attr.values():
        if len(group) < 2:
            continue
        newest = max(group, key=lambda g: (pool[g].created_turn, pool[g].created_at, g))
        for g in group:
            if g != newest and drop(g):
                resolutions.append((g, newest, "keep_new"))

    # stale: low retention and not re-retrieved this round
    for mid in buffer_ids:
        if mid not in sim and mid not in dropped and retention[mid] < config.eviction_threshold:
            drop(mid)

    return CurationPlan(
        evicted=[m for m in buffer_ids if m in dropped],
        added=[m for m in fresh if m not in dropped],
        resolutions=resolutions,
    )


def _llm_plan(wm, buffer_ids, fresh, pool, retention, sim, config, curator) -> CurationPlan | None:
    def row(mid: str) -> dict:
        m = pool[mid]
        return {"id": mid, "memory_type": m.memory_type.value, "created_turn": m.created_turn,
                "utility": round(m.utility, 4), "decay_score": round(retention[mid], 4),
                "similarity": round(sim[mid], 4) if mid in sim else None, "content": m.text}

    payload = json.dumps({
        "capacity": config.buffer_capacity,
        "eviction_threshold": config.eviction_threshold,
        "buffer": [row(m) for m in buffer_ids],
        "candidates": [row(m) for m in fresh],
    }, indent=1, sort_keys=True)
    try:
        reply = curator.complete(Role.CURATOR, prompts.system_prompt("curator"), payload).value
    except (GatewayError, SchemaViolation) as e:
        logger.warning("curator unavailable (%s); using rule-based curation", e)
        return None
    in_buffer, fresh_set = set(buffer_ids), set(fresh)
    evicted = []
    for mid in reply.deleted:
        if mid not in in_buffer:
            continue
        if _is_rule(pool[mid]):
            logger.warning("curator tried to evict rule memory %s; kept", mid)
            continue
        evicted.append(mid)
    resolutions = [(r.old_id, r.new_id, r.resolution) for r in reply.conflict_resolutions
                   if r.old_id in pool and r.new_id in pool]
    return CurationPlan(
        evicted=[m for m in buffer_ids if m in set(evicted)],
        added=[m for m in fresh if m in set(reply.add) & fresh_set],
        resolutions=resolutions,
        llm=True,
    )


def _enforce_capacity(plan: CurationPlan, buffer_ids, pool, retention, sim, capacity: int) -> None:
    evicted = set(plan.evicted)
    added = list(dict.fromkeys(plan.added))
    kept = [m for m in buffer_ids if m not in evicted]
    overflow = len(kept) + len(added) - capacity
    if overflow <= 0:
        plan.added = added
        return
    # stale buffer items first, lowest retention, oldest, smallest id
    stale = sorted((m for m in kept if m not in sim and not _is_rule(pool[m])),
                   key=lambda m: (retention[m], pool[m].created_turn, m))
    for m in stale[:overflow]:
        evicted.add(m)
    overflow -= min(overflow, len(stale))
    if overflow > 0:
        # then the weakest of this round's matches; buffer rules stay
        contenders = [m for m in kept if m in sim and not _is_rule(pool[m]) and m not in evicted] + added
        contenders.sort(key=lambda m: (sim.get(m, 0.0), retention[m], m))
        for m in contenders[:overflow]:
            if m in added:
                added.remove(m)
            else:
                evicted.add(m)
        overflow -= min(overflow, len(contenders))
    plan.evicted = [m for m in buffer_ids if m in evicted]
    plan.added = added
