"""Scripted scenarios: loading, distractor injection, rubric scoring, reports."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

import yaml

from decaymem.executor import Observer, Session, SyntheticClock, TurnReport
from decaymem.gateway import Gateway, Role, ScriptedTransport, count_tokens
from decaymem.model import MODES, ConfigError, EngineConfig, Level
from decaymem.store import Embedder, HashEmbedder, MemoryStore


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Rubric:
    """Deterministic answer check: all ``contains``, the ``regex``, and one of ``any_of`` (case-insensitive)."""

    contains: tuple[str, ...] = ()
    regex: Optional[str] = None
    any_of: tuple[str, ...] = ()

    @classmethod
    def parse(cls, spec: Any) -> "Rubric":
        if isinstance(spec, str):
            return cls(contains=(spec,))
        if not isinstance(spec, dict) or not set(spec) <= {"contains", "regex", "any_of"}:
            raise ScenarioError(f"bad rubric {spec!r}")
        contains = spec.get("contains", ())
        contains = (contains,) if isinstance(contains, str) else tuple(contains)
        rubric = cls(contains, spec.get("regex"), tuple(spec.get("any_of", ())))
        if rubric.regex is not None:
            try:
                re.compile(rubric.regex)
            except re.error as e:
                raise ScenarioError(f"bad rubric regex {rubric.regex!r}: {e}") from e
        return rubric

    def matches(self, answer: str) -> bool:
        low = answer.lower()
        if any(c.lower() not in low for c in self.contains):
            return False
        if self.regex is not None and not re.search(self.regex, answer, re.IGNORECASE):
            return False
        if self.any_of and not any(a.lower() in low for a in self.any_of):
            return False
        return True


@dataclass
class Event:
    user: str = ""
    distractor: bool = False
    expect: Optional[Rubric] = None
    evidence: tuple[str, ...] = ()
    script: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def parse(cls, spec: Any, where: str) -> "Event":
        if isinstance(spec, str):
            return cls(user=spec)
        if not isinstance(spec, dict):
            raise ScenarioError(f"{where}: event must be a string or mapping")
        unknown = set(spec) - {"user", "distractor", "expect", "evidence", "script"}
        if unknown:
            raise ScenarioError(f"{where}: unknown event keys {sorted(unknown)}")
        if spec.get("distractor"):
            if "user" in spec:
                raise ScenarioError(f"{where}: a distractor marker carries no user text")
            return cls(distractor=True)
        user = spec.get("user")
        if not isinstance(user, str) or not user.strip():
            raise ScenarioError(f"{where}: missing user text")
        script = spec.get("script") or {}
        for role in script:
            try:
                Role(role)
            except ValueError:
                raise ScenarioError(f"{where}: unknown role {role!r} in script") from None
        expect = Rubric.parse(spec["expect"]) if spec.get("expect") is not None else None
        evidence = spec.get("evidence") or ()
        evidence = (evidence,) if isinstance(evidence, str) else tuple(evidence)
        return cls(user=user.strip(), expect=expect, evidence=evidence, script=dict(script))


@dataclass
class Scenario:
    name: str
    events: list[Event]
    setup: list[Event] = field(default_factory=list)
    scripts: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    span_tokens: int = 0
    pool: list[str] = field(default_factory=list)
    task: dict[str, Any] = field(default_factory=dict)
    llm_curation: bool = False
    description: str = ""

    def engine_config(self, **overrides) -> EngineConfig:
        values = dict(self.config)
        values.update({k: v for k, v in overrides.items() if v is not None})
        mode = values.pop("mode", None)
        try:
            cfg = EngineConfig.for_mode(mode, **values) if mode else EngineConfig(**values)
        except TypeError as e:
            raise ScenarioError(f"{self.name}: bad config: {e}") from e
        return cfg


_SCENARIO_KEYS = {"name", "description", "config", "llm_curation", "task", "distractors", "setup", "events",
                  "scripts"}


def default_pool() -> list[str]:
    text = resources.files("decaymem.harness").joinpath("data/distractors.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


def parse_scenario(doc: Any, origin: str = "<scenario>") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError(f"{origin}: top level must be a mapping")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"{origin}: unknown keys {sorted(unknown)}")
    events_spec = doc.get("events")
    if not isinstance(events_spec, list) or not events_spec:
        raise ScenarioError(f"{origin}: 'events' must be a non-empty list")
    events = [Event.parse(e, f"{origin} events[{i}]") for i, e in enumerate(events_spec)]
    setup = [Event.parse(e, f"{origin} setup[{i}]") for i, e in enumerate(doc.get("setup") or [])]
    if any(e.distractor for e in setup):
        raise ScenarioError(f"{origin}: distractor markers belong in events")
    scripts = doc.get("scripts") or {}
    for role in scripts:
        try:
            Role(role)
        except ValueError:
            raise ScenarioError(f"{origin}: unknown role {role!r} in scripts") from None
    dist = doc.get("distractors") or {}
    span = int(dist.get("span_tokens", 0))
    if span < 0:
        raise ScenarioError(f"{origin}: span_tokens must be >= 0")
    pool = dist.get("pool")
    pool = default_pool() if pool in (None, "default") else [str(p) for p in pool]
    if span > 0 and not pool:
        raise ScenarioError(f"{origin}: distractor pool is empty")
    return Scenario(name=str(doc.get("name") or Path(origin).stem), events=events, setup=setup,
                    scripts=dict(scripts), config=dict(doc.get("config") or {}), span_tokens=span, pool=pool,
                    task=dict(doc.get("task") or {}), llm_curation=bool(doc.get("llm_curation", False)),
                    description=str(doc.get("description", "")))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (``restaurant``, ``sallyanne``)."""
    path = Path(source)
    if path.exists():
        text, origin = path.read_text(encoding="utf-8"), str(path)
    else:
        ref = resources.files("decaymem.harness").joinpath(f"data/{source}.yaml")
        if not ref.is_file():
            raise ScenarioError(f"no scenario file or bundled scenario named {source!r}")
        text, origin = ref.read_text(encoding="utf-8"), f"{source}.yaml"
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"{origin}: {e}") from e
    return parse_scenario(doc, origin)


def bundled_scenarios() -> list[str]:
    data = resources.files("decaymem.harness").joinpath("data")
    return sorted(p.name[:-5] for p in data.iterdir() if p.name.endswith(".yaml"))


# -- running ------------------------------------------------------------------------


def distractor_block(pool: list[str], span_tokens: int, start: int = 0) -> tuple[list[str], int]:
    """Filler turns until ``span_tokens`` is reached; overshoot stays below one turn's tokens."""
    turns, total, i = [], 0, start
    while total < span_tokens:
        text = f"Trivia break: {pool[i % len(pool)]}"
        turns.append(text)
        total += count_tokens(text)
        i += 1
    return turns, total


@dataclass
class ProbeResult:
    turn_index: int
    query: str
    response: str
    passed: bool
    evidence_missing: list[str]


@dataclass
class ScenarioReport:
    name: str
    mode: str
    turns: list[TurnReport]
    probes: list[ProbeResult]
    distractor_turns: int
    distractor_tokens: int
    level_counts: dict[str, int]
    links_symmetric: bool
    store: Optional[MemoryStore] = field(default=None, repr=False, compare=False)

    @property
    def solved(self) -> int:
        return sum(p.passed for p in self.probes)

    def summary(self) -> dict[str, Any]:
        total_tokens = sum(u["prompt_tokens"] + u["completion_tokens"] for t in self.turns for u in t.token_accounting)
        return {
            "scenario": self.name,
            "mode": self.mode,
            "solved": self.solved,
            "total": len(self.probes),
            "turns": len(self.turns),
            "total_tokens": total_tokens,
            "tokens_per_query": round(total_tokens / len(self.turns), 3) if self.turns else 0.0,
            "retrievals": sum(t.retrieved_count for t in self.turns),
            "evictions": sum(t.evicted_count for t in self.turns),
            "read_iterations": sum(t.read_iterations_used for t in self.turns),
            "distractor_turns": self.distractor_turns,
            "distractor_tokens": self.distractor_tokens,
            "level_counts": dict(self.level_counts),
            "links_symmetric": self.links_symmetric,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary": self.summary(),
            "probes": [dataclasses.asdict(p) for p in self.probes],
            "turns": [t.to_dict() for t in self.turns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def human(self) -> str:
        s = self.summary()
        lines = [f"scenario {s['scenario']} [{s['mode']}]: solved {s['solved']}/{s['total']}",
                 f"  turns {s['turns']} (distractor turns {s['distractor_turns']},"
                 f" distractor tokens {s['distractor_tokens']})",
                 f"  tokens {s['total_tokens']} ({s['tokens_per_query']} per query)",
                 f"  retrievals {s['retrievals']}, evictions {s['evictions']}, read iterations {s['read_iterations']}",
                 f"  store L2={s['level_counts']['L2']} L3={s['level_counts']['L3']},"
                 f" links symmetric: {s['links_symmetric']}"]
        for p in self.probes:
            mark = "PASS" if p.passed else "FAIL"
            lines.append(f"  [{mark}] turn {p.turn_index}: {p.response!r}")
            if p.evidence_missing:
                lines.append(f"         evidence missing from prompt: {p.evidence_missing}")
        return "\n".join(lines)


def links_symmetric(store: MemoryStore) -> bool:
    for rec in store.records():
        for partner in rec.payload.links:
            if partner not in store or rec.memory_id not in store.get(partner).links:
                return False
    return True


def mode_label(config: EngineConfig) -> str:
    for name, levels in MODES.items():
        if levels == config.enabled_levels:
            return name
    return "+".join(sorted(lv.value for lv in config.enabled_levels))


def run_scenario(scenario: Scenario, config: EngineConfig | None = None, transport=None,
                 embedder: Embedder | None = None, store: MemoryStore | None = None,
                 observer: Observer | None = None, clock: Callable[[], float] | None = None,
                 span_tokens: int | None = None) -> ScenarioReport:
    """Drive every setup turn and event through one session and score the probes."""
    config = config or scenario.engine_config()
    transport = transport if transport is not None else ScriptedTransport(scenario.scripts)
    embedder = embedder or HashEmbedder()
    session = Session(config, Gateway(transport), embedder=embedder, store=store,
                      clock=clock or SyntheticClock(), observer=observer,
                      llm_curation=scenario.llm_curation, task_metadata=scenario.task)
    span = scenario.span_tokens if span_tokens is None else span_tokens
    events = list(scenario.events)
    if span > 0 and not any(e.distractor for e in events):
        first_probe = next((i for i, e in enumerate(events) if e.expect is not None), len(events))
        events.insert(first_probe, Event(distractor=True))

    turns: list[TurnReport] = []
    probes: list[ProbeResult] = []
    d_turns = d_tokens = 0

    def run(event: Event) -> TurnReport:
        pushed = False
        if isinstance(transport, ScriptedTransport):
            for role, reply in event.script.items():
                transport.push(role, reply)
                pushed = True
        try:
            report = session.step(event.user)
        finally:
            if pushed:
                transport.clear_queue()
        turns.append(report)
        return report

    for event in scenario.setup:
        run(event)
    for event in events:
        if event.distractor:
            block, tokens = distractor_block(scenario.pool, span, start=d_turns)
            for text in block:
                run(Event(user=text))
            d_turns += len(block)
            d_tokens += tokens
            continue
        report = run(event)
        if event.expect is not None:
            missing = [e for e in event.evidence if e not in report.prompt]
            probes.append(ProbeResult(report.turn_index, event.user, report.response,
                                      event.expect.matches(report.response), missing))
    session.close()
    counts = {lv.value: session.store.count(lv) for lv in (Level.L2, Level.L3)}
    return ScenarioReport(scenario.name, mode_label(config), turns, probes, d_turns, d_tokens, counts,
                          links_symmetric(session.store), store=session.store)


__all__ = ["ConfigError", "Event", "ProbeResult", "Rubric", "Scenario", "ScenarioError", "ScenarioReport",
           "bundled_scenarios", "default_pool", "distractor_block", "load_scenario", "parse_scenario",
           "run_scenario"]
