"""Uniform gateway for every model call the engine makes.

A :class:`Gateway` sends ``(system, user)`` to a transport, validates the
reply against the role's schema, retries once with the validation error
appended, and records token usage per role and turn. Transports:

* :class:`ScriptedTransport` -- replies come from a script keyed by
  ``(role, call ordinal)``; used by tests and the scenario harness.
* :class:`RemoteTransport` -- an OpenAI-compatible chat-completions endpoint.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

logger = logging.getLogger(__name__)


class Role(str, Enum):
    JUDGE = "judge"
    PLANNER = "planner"
    CURATOR = "curator"
    SEMANTIC_EXTRACTOR = "semantic_extractor"
    EPISODIC_EXTRACTOR = "episodic_extractor"
    EPISODE_TRANSFORMER = "episode_transformer"
    UTILITY_ASSESSOR = "utility_assessor"
    PROPOSAL_GENERATOR = "proposal_generator"
    RESPONSE = "response"


class GatewayError(RuntimeError):
    """Transport failure (timeout, HTTP error, offline role). Retriable."""


class SchemaViolation(RuntimeError):
    """Reply still invalid after the repair retry."""


class ScriptExhausted(RuntimeError):
    """A scripted transport has no reply for this call -- a bug in the test script."""

    def __init__(self, role: str, ordinal: int):
        super().__init__(f"script exhausted: role={role!r} call #{ordinal}")
        self.role = role
        self.ordinal = ordinal


# -- response schemas -----------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="ignore")


class JudgeReply(_Strict):
    utility_score: float
    uncertainty_score: float
    sufficiency: Literal["sufficient", "partial", "insufficient"]
    retrieval_level: Literal["cluster_summaries", "cluster_memory_buffers", "memory_manager_retrieval"]
    explore: list[str] = Field(default_factory=list)
    avoid: list[str] = Field(default_factory=list)


class PlannedQuery(_Strict):
    id: str
    text: str
    query_type: Literal["semantic", "episodic"] = "semantic"
    target_cluster: Optional[str] = None


class PlannedEdge(_Strict):
    source: str = Field(alias="from")
    target: str = Field(alias="to")
    relationship: Literal["depends_on", "refines", "complements"] = "complements"


class PlannerReply(_Strict):
    queries: list[PlannedQuery] = Field(default_factory=list)
    edges: list[PlannedEdge] = Field(default_factory=list)


class Resolution(_Strict):
    old_id: str
    new_id: str
    resolution: Literal["keep_old", "keep_new", "merge"]


class CuratorReply(_Strict):
    keep: list[str] = Field(default_factory=list)
    add: list[str] = Field(default_factory=list)
    deleted: list[str] = Field(default_factory=list)
    conflict_resolutions: list[Resolution] = Field(default_factory=list)


class SemanticCandidate(_Strict):
    content: str
    memory_type: Optional[str] = None
    tags: list[str] = Field(default_factory=list)


class SemanticReply(_Strict):
    semantic_memories: list[SemanticCandidate] = Field(default_factory=list)


class EpisodicReply(_Strict):
    episode_entry: str = ""


class TransformReply(_Strict):
    preemptive_text: str


class UtilityReply(_Strict):
    used_memory_ids: list[str] = Field(default_factory=list)
    utility_scores: dict[str, float] = Field(default_factory=dict)
    reward_criteria: Optional[str] = None


class TopicProposal(_Strict):
    name: str
    summary: str = ""
    procedural_memory_update: list[str] = Field(default_factory=list)


class ProposalReply(_Strict):
    topics: list[TopicProposal] = Field(default_factory=list)


SCHEMAS: dict[Role, Optional[type[BaseModel]]] = {
    Role.JUDGE: JudgeReply,
    Role.PLANNER: PlannerReply,
    Role.CURATOR: CuratorReply,
    Role.SEMANTIC_EXTRACTOR: SemanticReply,
    Role.EPISODIC_EXTRACTOR: EpisodicReply,
    Role.EPISODE_TRANSFORMER: TransformReply,
    Role.UTILITY_ASSESSOR: UtilityReply,
    Role.PROPOSAL_GENERATOR: ProposalReply,
    Role.RESPONSE: None,  # free text
}


# -- token accounting -------------------------------------------------------------

_COUNT_RE = re.compile(r"\w+|[^\w\s]")


def count_tokens(text: str) -> int:
    """Word runs plus individual punctuation marks. Stable, provider-independent."""
    return len(_COUNT_RE.findall(text))


@dataclass(frozen=True)
class Usage:
    role: str
    turn: int
    prompt_tokens: int
    completion_tokens: int
    attempt: int = 1


# -- transports ------------------------------------------------------------------


@dataclass
class RawReply:
    text: str
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None


Reply = Union[str, dict, list, Callable[[str, str], Any], None]


@dataclass
class RoleScript:
    """Replies for one role.

    ``replies`` maps call ordinals (1-based, counted per role) to replies and
    may also be given as a list. ``default`` answers any ordinal without an
    entry; without it an unmatched call raises :class:`ScriptExhausted`.
    ``offline`` makes every call fail like a dead endpoint.

    A reply is a JSON value, a raw string (sent as-is, which lets scripts
    produce malformed output), a callable ``(system, user) -> reply``, or an
    ``{"$extract": regex, "template": "...{0}...", "fallback": "..."}``
    directive that fills the template from the first regex match in the user
    payload.
    """

    replies: dict[int, Reply] = field(default_factory=dict)
    default: Reply = None
    has_default: bool = False
    offline: bool = False

    @classmethod
    def parse(cls, spec: Any) -> "RoleScript":
        if isinstance(spec, RoleScript):
            return spec
        if isinstance(spec, list):
            return cls(replies={i + 1: r for i, r in enumerate(spec)})
        if isinstance(spec, dict) and set(spec) <= {"replies", "default", "offline"}:
            replies = spec.get("replies", {})
            if isinstance(replies, list):
                replies = {i + 1: r for i, r in enumerate(replies)}
            else:
                replies = {int(k): v for k, v in replies.items()}
            return cls(replies=replies, default=spec.get("default"), has_default="default" in spec,
                       offline=bool(spec.get("offline", False)))
        # a bare value is a default reply
        return cls(default=spec, has_default=True)


def render_reply(reply: Reply, system: str, user: str) -> str:
    if callable(reply):
        reply = reply(system, user)
    if isinstance(reply, dict) and "$extract" in reply:
        m = re.search(reply["$extract"], user, flags=re.IGNORECASE | re.DOTALL)
        if m is None:
            return str(reply.get("fallback", "I don't know."))
        groups = m.groups() or (m.group(0),)
        return str(reply.get("template", "{0}")).replace("{0}", groups[0])
    if isinstance(reply, str):
        return reply
    return json.dumps(reply, sort_keys=True)


class ScriptedTransport:
    def __init__(self, scripts: dict[str, Any] | None = None):
        self.scripts: dict[str, RoleScript] = {}
        self.ordinals: dict[str, int] = defaultdict(int)
        self._queued: dict[str, deque] = defaultdict(deque)
        for role, spec in (scripts or {}).items():
            self.set_script(role, spec)

    def set_script(self, role: str | Role, spec: Any) -> None:
        self.scripts[Role(role).value] = RoleScript.parse(spec)

    def push(self, role: str | Role, reply: Reply) -> None:
        """Queue a reply for the next call of ``role``; queued replies win over the script."""
        self._queued[Role(role).value].append(reply)

    def clear_queue(self) -> None:
        self._queued.clear()

    def send(self, role: str, system: str, user: str) -> RawReply:
        self.ordinals[role] += 1
        ordinal = self.ordinals[role]
        if self._queued.get(role):
            return RawReply(render_reply(self._queued[role].popleft(), system, user))
        script = self.scripts.get(role)
        if script is None:
            raise ScriptExhausted(role, ordinal)
        if script.offline:
            raise GatewayError(f"role {role} is offline (scripted)")
        if ordinal in script.replies:
            return RawReply(render_reply(script.replies[ordinal], system, user))
        if script.has_default:
            return RawReply(render_reply(script.default, system, user))
        raise ScriptExhausted(role, ordinal)


class RemoteTransport:
    """OpenAI-compatible chat completions over HTTP.

    Environment: ``DECAYMEM_API_BASE``, ``DECAYMEM_API_KEY``, ``DECAYMEM_MODEL``.
    """

    def __init__(self, base_url: str | None = None, model: str | None = None, api_key: str | None = None,
                 temperature: float = 0.0, max_tokens: int = 1024, timeout: float = 60.0,
                 retries: int = 2, client=None, role_settings: dict[str, dict] | None = None):
        import httpx

        self.base_url = (base_url or os.environ.get("DECAYMEM_API_BASE", "https://api.openai.com/v1")).rstrip("/")
        self.model = model or os.environ.get("DECAYMEM_MODEL", "gpt-4.1-mini")
        key = api_key if api_key is not None else os.environ.get("DECAYMEM_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.defaults = {"temperature": temperature, "max_tokens": max_tokens}
        self.role_settings = role_settings or {}
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def send(self, role: str, system: str, user: str) -> RawReply:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            **self.defaults,
            **self.role_settings.get(role, {}),
        }
        if SCHEMAS.get(Role(role)) is not None:
            body["response_format"] = {"type": "json_object"}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                r = self._client.post(f"{self.base_url}/chat/completions", json=body)
                if r.status_code in (429, 500, 502, 503, 504):
                    raise httpx.HTTPStatusError(f"status {r.status_code}", request=r.request, response=r)
                r.raise_for_status()
                data = r.json()
                usage = data.get("usage") or {}
                return RawReply(data["choices"][0]["message"]["content"] or "",
                                usage.get("prompt_tokens"), usage.get("completion_tokens"))
            except (httpx.TimeoutException, httpx.TransportError, httpx.HTTPStatusError) as e:
                last = e
                if attempt < self.retries:
                    time.sleep(min(2.0, 0.25 * 2 ** attempt))
            except (KeyError, IndexError, ValueError) as e:
                raise GatewayError(f"malformed chat-completion envelope: {e}") from e
        raise GatewayError(f"{role}: transport failed after {self.retries + 1} attempts: {last}")


# -- gateway ---------------------------------------------------------------------


_FENCE_RE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


def parse_json(text: str) -> Any:
    text = text.strip()
    m = _FENCE_RE.match(text)
    if m:
        text = m.group(1)
    return json.loads(text)


@dataclass
class Result:
    value: Any
    attempts: int


class Gateway:
    def __init__(self, transport):
        self.transport = transport
        self.turn = 0
        self.ledger: list[Usage] = []

    def complete(self, role: Role | str, system: str, user: str) -> Result:
        """One validated call. Raises GatewayError (transport) or SchemaViolation."""
        role = Role(role)
        schema = SCHEMAS[role]
        prompt = user
        for attempt in (1, 2):
            raw = self.transport.send(role.value, system, prompt)
            self._account(role, system, prompt, raw, attempt)
            if schema is None:
                return Result(raw.text, attempt)
            try:
                return Result(schema.model_validate(parse_json(raw.text)), attempt)
            except (ValueError, ValidationError) as e:
                error = str(e).splitlines()[0] if str(e) else type(e).__name__
                logger.info("%s reply failed validation (attempt %d): %s", role.value, attempt, error)
                prompt = (f"{user}\n\nYour previous reply was invalid: {error}\n"
                          f"Reply again with a single JSON object matching the required fields.")
        raise SchemaViolation(f"{role.value}: reply invalid after repair retry")

    def _account(self, role: Role, system: str, user: str, raw: RawReply, attempt: int) -> None:
        pt = raw.prompt_tokens if raw.prompt_tokens is not None else count_tokens(system) + count_tokens(user)
        ct = raw.completion_tokens if raw.completion_tokens is not None else count_tokens(raw.text)
        self.ledger.append(Usage(role.value, self.turn, pt, ct, attempt))

    def usage_for_turn(self, turn: int) -> list[Usage]:
        return [u for u in self.ledger if u.turn == turn]
