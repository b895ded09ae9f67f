"""Write-path analyst: fact extraction, episode accumulation, credit assignment, topics."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

from decaymem import prompts
from decaymem.decay import clamp_score
from decaymem.gateway import Gateway, GatewayError, Role, SchemaViolation
from decaymem.model import Cluster, IdFactory, Memory, MemoryType, WorkingMemory

logger = logging.getLogger(__name__)

_RULE_RE = re.compile(
    r"\b(when(ever)? i say|if i say|every time|remind me|after \d+ (messages|turns)|in \d+ (minutes|hours|turns)"
    r"|answer (only )?with|respond with|reply with|always (answer|respond|reply)|from now on|act as|you are a)\b"
    r"|^\s*(please\s+)?(always|never|do not|don't)\b",
    re.IGNORECASE,
)
_PREF_RE = re.compile(r"\b(i (really )?(like|love|enjoy|prefer|hate|dislike)|my favou?rite|likes|dislikes|prefers)\b",
                      re.IGNORECASE)
_INVENTORY_RE = re.compile(r"^(?:OBJECT_OP:\s*)?(add|remove)\b\s*(.*)$", re.IGNORECASE | re.DOTALL)


@dataclass
class Extracted:
    content: str
    memory_type: MemoryType
    tags: list[str] = field(default_factory=list)


@dataclass
class TopicUpdate:
    name: str
    summary: str = ""
    procedural_additions: list[str] = field(default_factory=list)


@dataclass
class TurnDistillation:
    semantic_candidates: list[Extracted] = field(default_factory=list)
    episode_contribution: str = ""
    topic_proposals: list[TopicUpdate] = field(default_factory=list)
    used_memory_ids: list[str] = field(default_factory=list)
    utility_scores: dict[str, float] = field(default_factory=dict)
    reward_criteria: Optional[str] = None


def classify_memory_type(content: str, proposed: str | None = None) -> MemoryType:
    """Use the extractor's label when valid; otherwise rule > preference > fact by surface cues."""
    if proposed:
        try:
            return MemoryType(proposed.strip().lower())
        except ValueError:
            pass
    if _RULE_RE.search(content):
        return MemoryType.RULE
    if _PREF_RE.search(content):
        return MemoryType.PREFERENCE
    return MemoryType.FACT


def normalize_inventory(content: str, tags: list[str]) -> str:
    """Inventory changes get the ``OBJECT_OP: ADD|REMOVE`` prefix."""
    if "inventory" not in {t.lower() for t in tags} and not content.upper().startswith("OBJECT_OP:"):
        return content
    m = _INVENTORY_RE.match(content.strip())
    if not m:
        return content
    return f"OBJECT_OP: {m.group(1).upper()} {m.group(2).strip()}".rstrip()


def exchange_text(user: str, assistant: str) -> str:
    return f"User: {user}\nAssistant: {assistant}"


def extract_semantic(user: str, assistant: str, extractor: Gateway) -> list[Extracted]:
    if not user.strip():
        raise ValueError("extraction needs the user turn")
    try:
        reply = extractor.complete(Role.SEMANTIC_EXTRACTOR, prompts.system_prompt("semantic_extractor"),
                                   exchange_text(user, assistant)).value
    except (GatewayError, SchemaViolation) as e:
        logger.warning("semantic extraction failed (%s); nothing extracted this turn", e)
        return []
    out = []
    for cand in reply.semantic_memories:
        content = cand.content.strip()
        if not content:
            continue
        tags = [t for t in cand.tags if t]
        out.append(Extracted(normalize_inventory(content, tags), classify_memory_type(content, cand.memory_type), tags))
    return out


def episode_entry(user: str, assistant: str, extractor: Gateway) -> str:
    try:
        text = extractor.complete(Role.EPISODIC_EXTRACTOR, prompts.system_prompt("episodic_extractor"),
                                  exchange_text(user, assistant)).value.episode_entry.strip()
    except (GatewayError, SchemaViolation) as e:
        logger.info("episodic extractor failed (%s); using the raw exchange", e)
        text = ""
    return text or exchange_text(user, assistant)


@dataclass
class EpisodeAccumulator:
    steps: list[int] = field(default_factory=list)
    contributions: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class CompletedEpisode:
    text: str
    raw_span: tuple[int, int]
    raw_fallback: bool


def accumulate_episode(acc: EpisodeAccumulator, step: int, contribution: str, ep: int,
                       transformer: Gateway | None) -> CompletedEpisode | None:
    """Add one exchange; every ``ep`` exchanges emit an episode and reset the accumulator."""
    if ep < 1:
        raise ValueError("episode length must be >= 1")
    acc.steps.append(step)
    acc.contributions.append(contribution)
    if len(acc) < ep:
        return None
    raw = "\n".join(acc.contributions)
    text, fallback = raw, True
    if transformer is not None:
        payload = "\n".join(f"[turn {s}] {c}" for s, c in zip(acc.steps, acc.contributions))
        try:
            text = transformer.complete(Role.EPISODE_TRANSFORMER, prompts.system_prompt("episode_transformer"),
                                        payload).value.preemptive_text.strip() or raw
            fallback = text == raw
        except (GatewayError, SchemaViolation) as e:
            logger.info("episode transform failed (%s); storing raw episode", e)
    done = CompletedEpisode(text, (acc.steps[0], acc.steps[-1]), fallback)
    acc.steps.clear()
    acc.contributions.clear()
    return done


def assign_credit(response: str, snapshot: Mapping[str, Memory],
                  assessor: Gateway) -> tuple[list[str], dict[str, float], Optional[str]]:
    """Ids from ``snapshot`` the response relied on; nothing on any failure."""
    if not snapshot:
        return [], {}, None
    lines = [f"Response:\n{response}", "", "Memories available:"]
    lines += [f"- [{mid}] {m.text}" for mid, m in snapshot.items()]
    try:
        reply = assessor.complete(Role.UTILITY_ASSESSOR, prompts.system_prompt("utility_assessor"),
                                  "\n".join(lines)).value
    except (GatewayError, SchemaViolation) as e:
        logger.warning("utility assessment failed (%s); crediting nothing", e)
        return [], {}, None
    used = []
    for mid in reply.used_memory_ids:
        if mid not in snapshot:
            logger.warning("assessor credited %s which was not in the buffer; ignored", mid)
        elif mid not in used:
            used.append(mid)
    scores = {mid: clamp_score(reply.utility_scores[mid]) for mid in used if mid in reply.utility_scores}
    return used, scores, reply.reward_criteria


def propose_topics(user: str, assistant: str, clusters: Mapping[str, Cluster],
                   proposer: Gateway) -> list[TopicUpdate]:
    listing = "\n".join(f"- {c.name}: {c.summary}" for c in clusters.values()) or "- (none)"
    payload = f"Existing clusters:\n{listing}\n\nLatest exchange:\n{exchange_text(user, assistant)}"
    try:
        reply = proposer.complete(Role.PROPOSAL_GENERATOR, prompts.system_prompt("proposal_generator"),
                                  payload).value
    except (GatewayError, SchemaViolation) as e:
        logger.info("topic proposal failed (%s)", e)
        return []
    return [TopicUpdate(t.name.strip(), t.summary.strip(), [p.strip() for p in t.procedural_memory_update if p.strip()])
            for t in reply.topics if t.name.strip()]


def apply_topics(wm: WorkingMemory, proposals: list[TopicUpdate], dynamic: bool, turn: int,
                 ids: IdFactory) -> list[str]:
    """Merge proposals into the resident clusters. Returns ids of clusters created.

    Names match case-insensitively, so a repeated proposal updates the
    existing cluster instead of spawning a duplicate. Static mode never creates.
    """
    created = []
    for p in proposals:
        cluster = wm.cluster_by_name(p.name)
        if cluster is None:
            if not dynamic:
                logger.debug("static topics: rejected new cluster %r", p.name)
                continue
            cid = ids.next("c")
            cluster = Cluster(cluster_id=cid, name=p.name, summary=p.summary or p.name,
                              last_access_turn=turn, creation_turn=turn)
            wm.clusters[cid] = cluster
            created.append(cid)
        elif p.summary:
            cluster.summary = p.summary
        for instr in p.procedural_additions:
            if instr not in cluster.procedural:
                cluster.procedural.append(instr)
    return created
