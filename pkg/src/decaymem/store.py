"""Persistent memory store: append-only record log, commit journal, exact search.

On disk a store is a directory with three UTF-8 newline-delimited files:

``records.jsonl``
    one line per record ``{schema_version, memory_id, level, payload,
    embedding, committed_turn}``; never rewritten.
``updates.jsonl``
    one line per committed turn that changed mutable stats or links of
    earlier records ``{turn_index, updates: [...]}``.
``journal.jsonl``
    one commit marker per turn ``{turn_index, record_ids, checksum}``,
    written last. Lines not covered by a valid marker are treated as an
    interrupted commit and truncated on open.

The checksum is the sha256 of the turn's record lines followed by its
update line (if any), exactly as written.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from decaymem.kernels import cosine_scores
from decaymem.model import MUTABLE_FIELDS, Level, Memory, memory_from_dict, memory_to_dict

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RECORDS = "records.jsonl"
UPDATES = "updates.jsonl"
JOURNAL = "journal.jsonl"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class StoreError(RuntimeError):
    pass


class DimensionError(StoreError):
    pass


class EmbeddingError(RuntimeError):
    """Retriable failure of an embedding provider."""


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# -- embeddings ---------------------------------------------------------------


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashEmbedder:
    """Deterministic bag-of-words embedder for offline runs and tests.

    Each lowercase alphanumeric token is hashed (blake2b) into one of ``dim``
    buckets; counts are L2-normalised. Texts without tokens map to a fixed
    unit vector in the last bucket so every embedding stays unit length.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self._cache: dict[str, int] = {}

    def bucket(self, token: str) -> int:
        b = self._cache.get(token)
        if b is None:
            h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            b = int.from_bytes(h, "little") % self.dim
            self._cache[token] = b
        return b

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[self.bucket(tok)] += 1.0
        norm = np.sqrt(np.dot(v, v))
        if norm == 0:
            v[-1] = 1.0
            return v
        return v / norm


class RemoteEmbedder:
    """Embeddings over an OpenAI-compatible ``/embeddings`` endpoint.

    Configured by ``DECAYMEM_EMBED_BASE_URL`` (falls back to
    ``DECAYMEM_API_BASE``), ``DECAYMEM_API_KEY`` and ``DECAYMEM_EMBED_MODEL``.
    """

    def __init__(self, dim: int, base_url: str | None = None, model: str | None = None,
                 api_key: str | None = None, timeout: float = 30.0, client=None):
        import httpx

        self.dim = dim
        self.base_url = (base_url or os.environ.get("DECAYMEM_EMBED_BASE_URL")
                         or os.environ.get("DECAYMEM_API_BASE", "https://api.openai.com/v1")).rstrip("/")
        self.model = model or os.environ.get("DECAYMEM_EMBED_MODEL", "text-embedding-3-small")
        key = api_key or os.environ.get("DECAYMEM_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def embed(self, text: str) -> np.ndarray:
        import httpx

        try:
            r = self._client.post(f"{self.base_url}/embeddings",
                                  json={"model": self.model, "input": text, "dimensions": self.dim})
            r.raise_for_status()
            v = np.asarray(r.json()["data"][0]["embedding"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            raise EmbeddingError(str(e)) from e
        if v.shape != (self.dim,):
            raise DimensionError(f"provider returned dimension {v.shape}, expected {self.dim}")
        return v / np.linalg.norm(v)


# -- records --------------------------------------------------------------------


@dataclass
class StoredRecord:
    memory_id: str
    level: Level
    payload: Memory
    embedding: np.ndarray
    committed_turn: int

    def line(self) -> str:
        return dumps({
            "schema_version": SCHEMA_VERSION,
            "memory_id": self.memory_id,
            "level": self.level.value,
            "payload": memory_to_dict(self.payload),
            "embedding": [float(x) for x in self.embedding],
            "committed_turn": self.committed_turn,
        })


def _mutable_state(mem: Memory) -> dict:
    d = {k: getattr(mem, k) for k in MUTABLE_FIELDS}
    d["links"] = list(mem.links)
    d["reward"] = mem.reward
    return d


def _apply_state(mem: Memory, state: dict) -> None:
    for k in MUTABLE_FIELDS:
        setattr(mem, k, state[k])
    mem.links[:] = state["links"]
    mem.reward = state.get("reward")


class MemoryStore:
    """Append-only store of L2/L3 records with a turn-scoped commit.

    Mutations happen inside ``begin(turn)`` ... ``commit()``; ``rollback()``
    restores the pre-turn state. With ``path=None`` the store lives in memory
    only but follows the same commit protocol.
    """

    def __init__(self, path: str | os.PathLike | None = None, dim: int = 256, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.dim = dim
        self.fsync = fsync
        self._records: list[StoredRecord] = []
        self._index: dict[str, int] = {}
        self._matrix = np.empty((0, dim))
        self._turn: int | None = None
        self._pending: list[StoredRecord] = []
        self._undo: dict[str, dict] = {}
        self._dirty: set[str] = set()
        self.journal: list[dict] = []
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- reading ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, memory_id: str) -> bool:
        return memory_id in self._index

    def ids(self) -> list[str]:
        return [r.memory_id for r in self._records]

    def get(self, memory_id: str) -> Memory:
        try:
            return self._records[self._index[memory_id]].payload
        except KeyError:
            raise KeyError(f"unknown memory id {memory_id!r}") from None

    def record(self, memory_id: str) -> StoredRecord:
        return self._records[self._index[memory_id]]

    def embedding(self, memory_id: str) -> np.ndarray:
        return self._matrix[self._index[memory_id]]

    def records(self, level: Level | None = None) -> list[StoredRecord]:
        if level is None:
            return list(self._records)
        return [r for r in self._records if r.level is level]

    def count(self, level: Level) -> int:
        return sum(1 for r in self._records if r.level is level)

    def search(self, query_embedding: np.ndarray, level: Level | None, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine; ties go to the newer commit, then the smaller id."""
        if k <= 0 or not self._records:
            return []
        q = np.asarray(query_embedding, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionError(f"query dimension {q.shape} != store dimension {self.dim}")
        scores = cosine_scores(self._matrix, q)
        rows = np.arange(len(self._records))
        if level is not None:
            mask = np.fromiter((r.level is level for r in self._records), dtype=bool, count=len(self._records))
            rows, scores = rows[mask], scores[mask]
            if rows.size == 0:
                return []
        committed = np.array([self._records[i].committed_turn for i in rows], dtype=np.int64)
        # ids are issued monotonically, so row order is id order
        order = np.lexsort((rows, -committed, -scores))[:k]
        return [(self._records[rows[i]].memory_id, float(scores[i])) for i in order]

    # -- writing ------------------------------------------------------------

    def begin(self, turn_index: int) -> None:
        if self._turn is not None:
            raise StoreError(f"turn {self._turn} still open")
        self._turn = turn_index
        self._pending = []
        self._undo = {}
        self._dirty = set()

    @property
    def in_turn(self) -> bool:
        return self._turn is not None

    def append(self, memories: Iterable[Memory], embeddings: Iterable[np.ndarray]) -> list[str]:
        if self._turn is None:
            raise StoreError("append outside of a turn; call begin() first")
        memories, embeddings = list(memories), [np.asarray(e, dtype=np.float64) for e in embeddings]
        if len(memories) != len(embeddings):
            raise ValueError("memories and embeddings differ in length")
        for m, e in zip(memories, embeddings):
            if e.shape != (self.dim,):
                raise DimensionError(f"embedding dimension {e.shape} != store dimension {self.dim}")
            if abs(float(np.linalg.norm(e)) - 1.0) > 1e-6:
                raise ValueError(f"embedding for {m.memory_id} is not unit-normalised")
            if m.memory_id in self._index:
                raise StoreError(f"duplicate memory id {m.memory_id}")
        ids = []
        for m, e in zip(memories, embeddings):
            rec = StoredRecord(m.memory_id, m.level, m, e, self._turn)
            self._index[m.memory_id] = len(self._records)
            self._records.append(rec)
            self._pending.append(rec)
            ids.append(m.memory_id)
        if embeddings:
            self._matrix = np.vstack([self._matrix, np.stack(embeddings)])
        return ids

    def touch(self, memory_id: str) -> Memory:
        """Return a record's payload for mutation within the open turn."""
        if self._turn is None:
            raise StoreError("mutation outside of a turn; call begin() first")
        mem = self.get(memory_id)
        if memory_id not in self._undo:
            self._undo[memory_id] = copy.deepcopy(_mutable_state(mem))
        self._dirty.add(memory_id)
        return mem

    def rollback(self) -> None:
        if self._turn is None:
            return
        pending = {r.memory_id for r in self._pending}
        for mid, state in self._undo.items():
            if mid not in pending:
                _apply_state(self.get(mid), state)
        if pending:
            keep = len(self._records) - len(self._pending)
            for r in self._pending:
                del self._index[r.memory_id]
            del self._records[keep:]
            self._matrix = self._matrix[:keep]
        self._turn = None
        self._pending, self._undo, self._dirty = [], {}, set()

    def commit(self) -> dict | None:
        """Write the open turn. Returns its journal entry (None for a no-op turn)."""
        if self._turn is None:
            raise StoreError("commit without begin")
        pending_ids = {r.memory_id for r in self._pending}
        changed = [mid for mid in sorted(self._dirty, key=self._index.__getitem__)
                   if mid not in pending_ids and _mutable_state(self.get(mid)) != self._undo[mid]]
        if not self._pending and not changed:
            self._turn = None
            self._undo, self._dirty = {}, set()
            return None
        record_lines = [r.line() for r in self._pending]
        update_line = None
        if changed:
            update_line = dumps({
                "turn_index": self._turn,
                "updates": [dict(memory_id=mid, **_mutable_state(self.get(mid))) for mid in changed],
            })
        entry = {"turn_index": self._turn, "record_ids": [r.memory_id for r in self._pending],
                 "checksum": _checksum(record_lines, update_line)}
        if self.path is not None:
            try:
                self._write(RECORDS, record_lines)
                if update_line is not None:
                    self._write(UPDATES, [update_line])
                self._write(JOURNAL, [dumps(entry)])
            except OSError as e:
                self.rollback()
                self._recover()
                raise StoreError(f"commit of turn {entry['turn_index']} failed: {e}") from e
        self.journal.append(entry)
        self._turn = None
        self._pending, self._undo, self._dirty = [], {}, set()
        return entry

    def _write(self, name: str, lines: list[str]) -> None:
        if not lines:
            return
        with open(self.path / name, "a", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    # -- loading ------------------------------------------------------------------

    def _recover(self) -> None:
        """Truncate on-disk files back to the last valid commit marker."""
        if self.path is None:
            return
        self._records, self._index, self.journal = [], {}, []
        self._matrix = np.empty((0, self.dim))
        self._load()

    def _load(self) -> None:
        embeddings = []
        counts = (0, 0, 0)
        for entry, chunk, update, counts in _committed_turns(self.path):
            for line in chunk:
                p = json.loads(line)
                if p.get("schema_version") != SCHEMA_VERSION:
                    raise StoreError(f"unsupported schema_version {p.get('schema_version')!r}")
                emb = np.asarray(p["embedding"], dtype=np.float64)
                if emb.shape != (self.dim,):
                    raise DimensionError(f"stored dimension {emb.shape} != {self.dim}")
                mem = memory_from_dict(p["level"], p["payload"])
                self._index[mem.memory_id] = len(self._records)
                self._records.append(StoredRecord(mem.memory_id, Level(p["level"]), mem, emb, p["committed_turn"]))
                embeddings.append(emb)
            if update is not None:
                for u in json.loads(update)["updates"]:
                    _apply_state(self.get(u["memory_id"]), u)
            self.journal.append(entry)
        if embeddings:
            self._matrix = np.stack(embeddings)
        # A complete marker that fails to verify is corruption, not an interrupted commit.
        markers = len(_read_lines(self.path / JOURNAL))
        if counts[2] < markers:
            raise StoreError(f"{self.path / JOURNAL}: entry {counts[2] + 1} does not match the record log")
        # drop anything past the last good commit
        for name, keep in zip((RECORDS, UPDATES, JOURNAL), counts):
            _truncate(self.path / name, keep)


def _checksum(record_lines: list[str], update_line: str | None) -> str:
    digest = hashlib.sha256()
    for line in record_lines:
        digest.update(line.encode("utf-8") + b"\n")
    if update_line is not None:
        digest.update(update_line.encode("utf-8") + b"\n")
    return digest.hexdigest()


def _committed_turns(path: Path):
    """Yield ``(journal_entry, record_lines, update_line, line_counts)`` per valid commit.

    Stops at the first marker that does not verify; ``line_counts`` is the
    number of lines of (records, updates, journal) consumed so far.
    """
    rec_lines = _read_lines(path / RECORDS)
    upd_lines = _read_lines(path / UPDATES)
    jr_lines = _read_lines(path / JOURNAL)
    ri = ui = 0
    for ji, jline in enumerate(jr_lines):
        try:
            entry = json.loads(jline)
            n = len(entry["record_ids"])
            chunk = rec_lines[ri:ri + n]
            if len(chunk) != n:
                return
            if [json.loads(line)["memory_id"] for line in chunk] != entry["record_ids"]:
                return
            update = None
            if ui < len(upd_lines) and _checksum(chunk, upd_lines[ui]) == entry["checksum"]:
                update = upd_lines[ui]
            elif _checksum(chunk, None) != entry["checksum"]:
                return
        except (ValueError, KeyError, TypeError):
            return
        ri += n
        ui += update is not None
        yield entry, chunk, update, (ri, ui, ji + 1)


def _read_lines(path: Path) -> list[str]:
    """Complete (newline-terminated) lines of a file; a torn last line is dropped."""
    if not path.exists():
        return []
    lines = []
    for raw in path.read_bytes().split(b"\n")[:-1]:
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError:
            break
    return lines


def _truncate(path: Path, keep_lines: int) -> None:
    if not path.exists():
        return
    data = path.read_bytes()
    size = 0
    for _ in range(keep_lines):
        size = data.index(b"\n", size) + 1
    if len(data) != size:
        logger.warning("truncating %s to %d bytes (uncommitted tail)", path, size)
        with open(path, "r+b") as fh:
            fh.truncate(size)


def replay(src: str | os.PathLike, dst: str | os.PathLike, dim: int = 256) -> MemoryStore:
    """Rebuild a store from ``src``'s journal into an empty directory ``dst``.

    Records and updates are re-applied through the normal commit path, so the
    rebuilt files are byte-identical to the committed prefix of ``src``.
    """
    dst = Path(dst)
    if dst.exists() and any(dst.iterdir()):
        raise StoreError(f"replay target {dst} is not empty")
    out = MemoryStore(dst, dim=dim)
    for entry, chunk, update, _ in _committed_turns(Path(src)):
        out.begin(entry["turn_index"])
        mems, embs = [], []
        for line in chunk:
            p = json.loads(line)
            mems.append(memory_from_dict(p["level"], p["payload"]))
            embs.append(np.asarray(p["embedding"], dtype=np.float64))
        out.append(mems, embs)
        if update is not None:
            for u in json.loads(update)["updates"]:
                _apply_state(out.touch(u["memory_id"]), u)
        got = out.commit()
        if got is None or got["checksum"] != entry["checksum"]:
            raise StoreError(f"replay diverged at turn {entry['turn_index']}")
    return out
