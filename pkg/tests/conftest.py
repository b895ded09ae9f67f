import copy
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from decaymem.executor import Session, SyntheticClock  # noqa: E402
from decaymem.gateway import Gateway, ScriptedTransport  # noqa: E402
from decaymem.model import EngineConfig  # noqa: E402
from decaymem.store import HashEmbedder, MemoryStore  # noqa: E402

JUDGE_PARTIAL = {"utility_score": 0.5, "uncertainty_score": 0.6, "sufficiency": "partial",
                 "retrieval_level": "memory_manager_retrieval"}
JUDGE_SUFFICIENT = {"utility_score": 0.7, "uncertainty_score": 0.2, "sufficiency": "sufficient",
                    "retrieval_level": "cluster_summaries"}

BASE_SCRIPTS = {
    "judge": {"default": JUDGE_PARTIAL},
    "planner": {"default": {"queries": [], "edges": []}},
    "curator": {"offline": True},
    "semantic_extractor": {"default": {"semantic_memories": []}},
    "episodic_extractor": {"default": {"episode_entry": ""}},
    "episode_transformer": {"default": {"preemptive_text": "When this comes up again, reuse what was agreed."}},
    "utility_assessor": {"default": {"used_memory_ids": []}},
    "proposal_generator": {"default": {"topics": []}},
    "response": {"default": "ok"},
}


def scripts(**overrides):
    out = copy.deepcopy(BASE_SCRIPTS)
    out.update(overrides)
    return out


def make_session(config=None, store=None, llm_curation=False, **script_overrides):
    transport = ScriptedTransport(scripts(**script_overrides))
    session = Session(config or EngineConfig(), Gateway(transport), embedder=HashEmbedder(), store=store,
                      clock=SyntheticClock(), llm_curation=llm_curation)
    return session, transport


def fact_reply(*contents, memory_type="fact", tags=()):
    return {"semantic_memories": [{"content": c, "memory_type": memory_type, "tags": list(tags)} for c in contents]}


@pytest.fixture
def embedder():
    return HashEmbedder()


@pytest.fixture
def store():
    return MemoryStore(dim=256)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda ln: ln.split()[1]):
        terminalreporter.write_line(line)
