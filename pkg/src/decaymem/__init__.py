"""Decay-driven memory control for long-horizon conversational agents.

The read path decides when to consult persistent memory (uncertainty-gated
retrieval); the write path decides what to strengthen (usage-driven
reinforcement). Accessibility of every memory decays with the number of
turns since it was last used.
"""

from decaymem._accel import backend
from decaymem.decay import entity_retention, reinforce, retention, stability
from decaymem.executor import Session, SyntheticClock, TurnReport, open_session
from decaymem.gateway import Gateway, RemoteTransport, Role, ScriptedTransport
from decaymem.model import (Cluster, EngineConfig, EpisodicMemory, Level, MemoryType, SemanticMemory,
                            WorkingMemory, new_session)
from decaymem.store import HashEmbedder, MemoryStore

__version__ = "0.1.0"

__all__ = [
    "Cluster", "EngineConfig", "EpisodicMemory", "Gateway", "HashEmbedder", "Level", "MemoryStore",
    "MemoryType", "RemoteTransport", "Role", "ScriptedTransport", "SemanticMemory", "Session", "SyntheticClock",
    "TurnReport", "WorkingMemory", "backend", "entity_retention", "new_session", "open_session", "reinforce",
    "retention", "stability",
]
