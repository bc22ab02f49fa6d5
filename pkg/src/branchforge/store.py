"""Persistent property graph of generated games.

The default backend is a single sqlite file (or ``:memory:``) with node and
edge tables, so reproducing results needs no database server. Anything that
speaks this class's method surface can stand in for it, which is the seam
for a server-based graph database.

Exports are canonical: chunks topologically ordered with a deterministic
tie-break, keys sorted, optional fields omitted rather than null. Two
exports of the same graph are byte-identical.
"""

from __future__ import annotations

import heapq
import json
import sqlite3
import threading
from dataclasses import dataclass
from typing import Optional

from jsonschema import Draft202012Validator

from .errors import (ChoiceOnNonChoiceSource, DuplicateEdge, InvalidChoiceAt,
                     SchemaViolation, StorageFailure, UnknownNode,
                     UnknownStory, VersionUnsupported)
from .models import ConversationHistory, StoryChunk, StoryData

FORMAT_VERSION = 1

_EXPORT_ENVELOPE = Draft202012Validator({
    "type": "object",
    "required": ["format_version", "story_data", "chunks", "edges",
                 "manifest"],
    "properties": {
        "format_version": {"type": "integer"},
        "story_data": {"type": "object"},
        "chunks": {"type": "array", "items": {"type": "object"}},
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to"],
                "properties": {
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "choice_index": {"type": "integer"},
                },
            },
        },
        "manifest": {"type": "object"},
    },
})


@dataclass(frozen=True)
class Edge:
    from_id: str
    to_id: str
    choice_index: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"from": self.from_id, "to": self.to_id}
        if self.choice_index is not None:
            d["choice_index"] = self.choice_index
        return d


@dataclass(frozen=True)
class GameGraph:
    """In-memory view of one persisted game."""

    story_id: str
    root: StoryData
    chunks: dict[str, StoryChunk]
    edges: tuple[Edge, ...]


def canonical_json(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")


class GraphStore:
    """Node/edge tables over sqlite; thread-safe for concurrent workers."""

    def __init__(self, path: str = ":memory:"):
        self.db_path = str(path)
        self._lock = threading.RLock()
        try:
            self._db = sqlite3.connect(self.db_path, check_same_thread=False)
            self._create_tables()
        except sqlite3.Error as e:
            raise StorageFailure(str(e)) from e

    def _create_tables(self):
        self._db.executescript("""
            CREATE TABLE IF NOT EXISTS stories (
                id TEXT PRIMARY KEY, body TEXT NOT NULL);
            CREATE TABLE IF NOT EXISTS chunks (
                id TEXT PRIMARY KEY, story_id TEXT NOT NULL,
                body TEXT NOT NULL);
            CREATE TABLE IF NOT EXISTS edges (
                story_id TEXT NOT NULL, from_id TEXT NOT NULL,
                to_id TEXT NOT NULL, choice_index INTEGER,
                UNIQUE(from_id, to_id, choice_index));
            CREATE TABLE IF NOT EXISTS histories (
                ref TEXT PRIMARY KEY, story_id TEXT NOT NULL,
                body TEXT NOT NULL);
            CREATE TABLE IF NOT EXISTS runs (
                story_id TEXT PRIMARY KEY, body TEXT NOT NULL);
            CREATE TABLE IF NOT EXISTS failures (
                story_id TEXT NOT NULL, body TEXT NOT NULL);
            CREATE TABLE IF NOT EXISTS scores (
                story_id TEXT NOT NULL, chunk_id TEXT NOT NULL,
                body TEXT NOT NULL, UNIQUE(story_id, chunk_id));
            CREATE INDEX IF NOT EXISTS idx_chunks_story
                ON chunks(story_id);
            CREATE INDEX IF NOT EXISTS idx_edges_story
                ON edges(story_id);
        """)
        self._db.commit()

    def close(self):
        with self._lock:
            self._db.close()

    # --- writes ----------------------------------------------------------

    def _put(self, table: str, key_col: str, key: str, body: str,
             extra: dict | None = None):
        with self._lock:
            row = self._db.execute(
                f"SELECT body FROM {table} WHERE {key_col} = ?",
                (key,)).fetchone()
            if row is not None:
                if row[0] != body:
                    raise StorageFailure(
                        f"{table} id {key} already stored with a "
                        f"different payload")
                return
            cols = [key_col, "body"] + list(extra or {})
            vals = [key, body] + list((extra or {}).values())
            self._db.execute(
                f"INSERT INTO {table} ({', '.join(cols)}) "
                f"VALUES ({', '.join('?' * len(vals))})", vals)
            self._db.commit()

    def put_story_data(self, sd: StoryData) -> str:
        self._put("stories", "id", sd.id, canonical_json(sd.to_dict()).decode())
        return sd.id

    def put_chunk(self, chunk: StoryChunk) -> str:
        with self._lock:
            if not self._story_exists(chunk.story_id):
                raise UnknownStory(chunk.story_id)
            self._put("chunks", "id", chunk.id,
                      canonical_json(chunk.to_dict()).decode(),
                      {"story_id": chunk.story_id})
        return chunk.id

    def link(self, from_id: str, to_id: str,
             choice_index: Optional[int] = None):
        with self._lock:
            source_chunk = self._chunk_row(from_id)
            if source_chunk is None:
                if not self._story_exists(from_id):
                    raise UnknownNode(f"unknown source node {from_id}")
                story_id = from_id
                source_bears_choices = False
                is_root = True
            else:
                story_id = source_chunk.story_id
                source_bears_choices = source_chunk.status.bears_choices
                is_root = False
            target = self._chunk_row(to_id)
            if target is None:
                raise UnknownNode(f"unknown target chunk {to_id}")

            if choice_index is not None and not source_bears_choices:
                raise ChoiceOnNonChoiceSource(
                    f"source {from_id} bears no choices")
            if source_bears_choices:
                if choice_index is None:
                    raise ChoiceOnNonChoiceSource(
                        f"source {from_id} bears choices; choice_index "
                        f"is required")
                if not 0 <= choice_index < len(source_chunk.choices):
                    raise ChoiceOnNonChoiceSource(
                        f"choice_index {choice_index} out of range for "
                        f"source {from_id}")

            existing = self._db.execute(
                "SELECT to_id, choice_index FROM edges WHERE from_id = ?",
                (from_id,)).fetchall()
            for ex_to, ex_choice in existing:
                if ex_to == to_id and ex_choice == choice_index:
                    return  # idempotent re-link
                if is_root:
                    raise DuplicateEdge("root already has its single edge")
                if source_bears_choices and ex_choice == choice_index:
                    raise DuplicateEdge(
                        f"choice {choice_index} of {from_id} already linked")
                if not source_bears_choices:
                    raise DuplicateEdge(
                        f"non-choice source {from_id} already has a child")
            self._db.execute(
                "INSERT INTO edges (story_id, from_id, to_id, choice_index) "
                "VALUES (?, ?, ?, ?)",
                (story_id, from_id, to_id, choice_index))
            self._db.commit()

    def put_history(self, ref: str, story_id: str,
                    history: ConversationHistory):
        self._put("histories", "ref", ref,
                  canonical_json(history.to_dict()).decode(),
                  {"story_id": story_id})

    def put_run_manifest(self, story_id: str, manifest: dict):
        with self._lock:
            self._db.execute(
                "INSERT INTO runs (story_id, body) VALUES (?, ?) "
                "ON CONFLICT(story_id) DO UPDATE SET body = excluded.body",
                (story_id, canonical_json(manifest).decode()))
            self._db.commit()

    def put_failure(self, story_id: str, record: dict):
        with self._lock:
            self._db.execute(
                "INSERT INTO failures (story_id, body) VALUES (?, ?)",
                (story_id, canonical_json(record).decode()))
            self._db.commit()

    def put_chunk_scores(self, story_id: str, chunk_id: str, record: dict):
        with self._lock:
            self._db.execute(
                "INSERT INTO scores (story_id, chunk_id, body) "
                "VALUES (?, ?, ?) ON CONFLICT(story_id, chunk_id) "
                "DO UPDATE SET body = excluded.body",
                (story_id, chunk_id, canonical_json(record).decode()))
            self._db.commit()

    # --- reads -----------------------------------------------------------

    def _story_exists(self, story_id: str) -> bool:
        return self._db.execute("SELECT 1 FROM stories WHERE id = ?",
                                (story_id,)).fetchone() is not None

    def _chunk_row(self, chunk_id: str) -> Optional[StoryChunk]:
        row = self._db.execute("SELECT body FROM chunks WHERE id = ?",
                               (chunk_id,)).fetchone()
        return StoryChunk.from_dict(json.loads(row[0])) if row else None

    def get_story(self, story_id: str) -> StoryData:
        with self._lock:
            row = self._db.execute("SELECT body FROM stories WHERE id = ?",
                                   (story_id,)).fetchone()
        if row is None:
            raise UnknownStory(story_id)
        return StoryData.from_dict(json.loads(row[0]))

    def get_chunk(self, chunk_id: str) -> StoryChunk:
        with self._lock:
            chunk = self._chunk_row(chunk_id)
        if chunk is None:
            raise UnknownNode(f"unknown chunk {chunk_id}")
        return chunk

    def get_history(self, ref: str) -> ConversationHistory:
        with self._lock:
            row = self._db.execute("SELECT body FROM histories WHERE ref = ?",
                                   (ref,)).fetchone()
        if row is None:
            raise UnknownNode(f"unknown history {ref}")
        return ConversationHistory.from_dict(json.loads(row[0]))

    def run_manifest(self, story_id: str) -> dict:
        with self._lock:
            row = self._db.execute("SELECT body FROM runs WHERE story_id = ?",
                                   (story_id,)).fetchone()
        return json.loads(row[0]) if row else {}

    def failures(self, story_id: str) -> list[dict]:
        with self._lock:
            rows = self._db.execute(
                "SELECT body FROM failures WHERE story_id = ?",
                (story_id,)).fetchall()
        return [json.loads(r[0]) for r in rows]

    def chunk_scores(self, story_id: str) -> dict[str, dict]:
        with self._lock:
            rows = self._db.execute(
                "SELECT chunk_id, body FROM scores WHERE story_id = ?",
                (story_id,)).fetchall()
        return {cid: json.loads(body) for cid, body in rows}

    def list_stories(self) -> list[dict]:
        with self._lock:
            rows = self._db.execute(
                "SELECT id, body FROM stories ORDER BY id").fetchall()
        out = []
        for sid, body in rows:
            data = json.loads(body)
            out.append({"story_id": sid, "title": data["title"],
                        "synopsis": data["synopsis"]})
        return out

    def story_chunks(self, story_id: str) -> dict[str, StoryChunk]:
        with self._lock:
            if not self._story_exists(story_id):
                raise UnknownStory(story_id)
            rows = self._db.execute(
                "SELECT body FROM chunks WHERE story_id = ?",
                (story_id,)).fetchall()
        chunks = [StoryChunk.from_dict(json.loads(r[0])) for r in rows]
        return {c.id: c for c in chunks}

    def story_edges(self, story_id: str) -> list[Edge]:
        with self._lock:
            rows = self._db.execute(
                "SELECT from_id, to_id, choice_index FROM edges "
                "WHERE story_id = ?", (story_id,)).fetchall()
        return [Edge(f, t, c) for f, t, c in rows]

    def children(self, node_id: str) -> list[tuple[Optional[int], str]]:
        """Outgoing edges of a node as (choice_index, child_id) pairs."""
        with self._lock:
            rows = self._db.execute(
                "SELECT choice_index, to_id FROM edges WHERE from_id = ?",
                (node_id,)).fetchall()
        return sorted(rows, key=lambda r: (-1 if r[0] is None else r[0], r[1]))

    def first_chunk(self, story_id: str) -> Optional[StoryChunk]:
        """The story beginning: the sole child of the root node."""
        kids = self.children(story_id)
        if not self._story_exists(story_id):
            raise UnknownStory(story_id)
        return self.get_chunk(kids[0][1]) if kids else None

    def load_game(self, story_id: str) -> GameGraph:
        return GameGraph(
            story_id=story_id,
            root=self.get_story(story_id),
            chunks=self.story_chunks(story_id),
            edges=tuple(self.story_edges(story_id)),
        )

    # --- queries ---------------------------------------------------------

    def endings(self, story_id: str) -> list[StoryChunk]:
        """All chunks with out-degree zero. Failure markers live elsewhere
        and are never part of this list."""
        chunks = self.story_chunks(story_id)
        sources = {e.from_id for e in self.story_edges(story_id)}
        return sorted((c for cid, c in chunks.items() if cid not in sources),
                      key=lambda c: c.id)

    def path(self, story_id: str, choice_sequence: list[int],
             ) -> list[StoryChunk]:
        """Chunks visited from the story beginning, following each choice.

        Hops through non-choice chunks (chapter endings) happen implicitly
        without consuming a choice; traversal stops at the first
        choice-bearing chunk once the sequence is exhausted, or at a leaf.
        """
        current = self.first_chunk(story_id)
        if current is None:
            if choice_sequence:
                raise InvalidChoiceAt(0, "story has no chunks")
            return []
        visited = [current]
        step = 0
        while True:
            kids = self.children(current.id)
            if current.status.bears_choices:
                if step >= len(choice_sequence):
                    return visited
                wanted = choice_sequence[step]
                match = [to for ci, to in kids if ci == wanted]
                if not match:
                    raise InvalidChoiceAt(
                        step, f"chunk {current.id} has no choice {wanted}")
                current = self.get_chunk(match[0])
                visited.append(current)
                step += 1
            else:
                if not kids:
                    if step < len(choice_sequence):
                        raise InvalidChoiceAt(
                            step, f"leaf {current.id} reached with choices "
                                  f"left over")
                    return visited
                current = self.get_chunk(kids[0][1])
                visited.append(current)

    def stats(self, story_id: str) -> dict:
        chunks = self.story_chunks(story_id)
        edges = self.story_edges(story_id)
        sources = {e.from_id for e in edges}
        per_chapter: dict[int, int] = {}
        for c in chunks.values():
            per_chapter[c.chapter] = per_chapter.get(c.chapter, 0) + 1

        children: dict[str, list[str]] = {}
        for e in edges:
            children.setdefault(e.from_id, []).append(e.to_id)

        def depth(node_id: str) -> int:
            best = 0
            stack = [(node_id, 1)]
            while stack:
                nid, d = stack.pop()
                best = max(best, d)
                for kid in children.get(nid, []):
                    stack.append((kid, d + 1))
            return best

        first = self.first_chunk(story_id)
        return {
            "chunk_count": len(chunks),
            "leaf_count": sum(1 for cid in chunks if cid not in sources),
            "max_depth": depth(first.id) if first else 0,
            "per_chapter_counts": dict(sorted(per_chapter.items())),
        }

    # --- export / import --------------------------------------------------

    def export_game(self, story_id: str,
                    include_histories: bool = False) -> dict:
        sd = self.get_story(story_id)
        chunks = self.story_chunks(story_id)
        edges = self.story_edges(story_id)

        ordered = _topological_order(chunks, edges)
        chunk_dicts = []
        for cid in ordered:
            d = chunks[cid].to_dict()
            if include_histories and chunks[cid].history_ref:
                d["history"] = self.get_history(
                    chunks[cid].history_ref).to_dict()["messages"]
            chunk_dicts.append(d)

        edge_dicts = [e.to_dict() for e in sorted(
            edges, key=lambda e: (e.from_id,
                                  -1 if e.choice_index is None
                                  else e.choice_index, e.to_id))]
        return {
            "format_version": FORMAT_VERSION,
            "story_data": sd.to_dict(),
            "chunks": chunk_dicts,
            "edges": edge_dicts,
            "manifest": self.run_manifest(story_id),
        }

    def import_game(self, doc: dict) -> str:
        error = next(_EXPORT_ENVELOPE.iter_errors(doc), None)
        if error is not None:
            path = ".".join(str(p) for p in error.absolute_path) or "$"
            raise SchemaViolation(path, error.message)
        if doc["format_version"] != FORMAT_VERSION:
            raise VersionUnsupported(
                f"format_version {doc['format_version']} is not supported")

        sd = StoryData.from_dict(doc["story_data"])
        chunks = [StoryChunk.from_dict(d) for d in doc["chunks"]]
        known = {sd.id} | {c.id for c in chunks}
        for i, e in enumerate(doc["edges"]):
            if e["from"] not in known:
                raise SchemaViolation(f"edges[{i}].from",
                                      f"unknown node {e['from']}")
            if e["to"] not in {c.id for c in chunks}:
                raise SchemaViolation(f"edges[{i}].to",
                                      f"unknown chunk {e['to']}")
        for i, c in enumerate(chunks):
            if c.story_id != sd.id:
                raise SchemaViolation(f"chunks[{i}].story_id",
                                      "does not match story_data.id")

        self.put_story_data(sd)
        for raw, chunk in zip(doc["chunks"], chunks):
            self.put_chunk(chunk)
            if "history" in raw and chunk.history_ref:
                self.put_history(
                    chunk.history_ref, sd.id,
                    ConversationHistory.from_dict({"messages": raw["history"]}))
        for e in doc["edges"]:
            self.link(e["from"], e["to"], e.get("choice_index"))
        if doc["manifest"]:
            self.put_run_manifest(sd.id, doc["manifest"])
        return sd.id


def _topological_order(chunks: dict[str, StoryChunk],
                       edges: list[Edge]) -> list[str]:
    """Parents before children, ties broken by id for canonical output."""
    indegree = {cid: 0 for cid in chunks}
    children: dict[str, list[str]] = {}
    for e in edges:
        if e.from_id in chunks and e.to_id in indegree:
            indegree[e.to_id] += 1
            children.setdefault(e.from_id, []).append(e.to_id)
    ready = [cid for cid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        cid = heapq.heappop(ready)
        out.append(cid)
        for kid in children.get(cid, []):
            indegree[kid] -= 1
            if indegree[kid] == 0:
                heapq.heappush(ready, kid)
    # Cycles cannot come from generation; tolerate them on import by
    # appending leftovers in id order.
    if len(out) < len(chunks):
        out.extend(sorted(set(chunks) - set(out)))
    return out
