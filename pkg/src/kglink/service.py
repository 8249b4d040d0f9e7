"""HTTP workbench around one dataset bundle.

A Workspace pins the immutable bundle, optional scoring engines (an
open-world model and retrieval indices), and a mutable overlay of
human-accepted task triples. The overlay is an append-only TSV log with
tombstones, persisted next to the bundle, so every state it ever had can
be replayed. Endpoints return a ``{"data": ..., "error": ...}``
envelope; failures carry machine-readable codes. Read endpoints never
mutate anything, and scoring endpoints return exactly what the library
calls return.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse

from .bow import InvertedIndex, link_mention_bow, rank_contexts_bow
from .core import DIRECTIONS, DatasetBundle
from .builder import stats_report
from .evaluation import link_rank_neural, rank_contexts_neural
from .inductive import OpenWorldModel
from .storage import TASKS_HEADER

OVERLAY_FILENAME = "overlay.log.tsv"


@dataclass(frozen=True)
class OverlayEntry:
    id: str
    mention: str
    relation: str
    vertex: str
    direction: str
    timestamp: str
    provenance: str


def overlay_id(mention: str, relation: str, vertex: str, direction: str) -> str:
    """Content-addressed id over the triple fields only, so identical
    proposals always collide regardless of when or how they arrive."""
    payload = "\t".join((mention, relation, vertex, direction)).encode("utf-8")
    return hashlib.sha1(payload).hexdigest()[:12]


class Workspace:
    """Bundle + engines + overlay, with a single-writer mutation lock."""

    def __init__(
        self,
        bundle: DatasetBundle,
        model: OpenWorldModel | None = None,
        ranking_index: InvertedIndex | None = None,
        linking_index: InvertedIndex | None = None,
        split: str = "validation",
        overlay_path: str | Path | None = None,
        seed: int = 0,
    ):
        if split not in ("validation", "test"):
            raise ValueError(f"split must be validation or test, got {split!r}")
        self.bundle = bundle
        self.model = model
        self.ranking_index = ranking_index
        self.linking_index = linking_index
        self.split = split
        self.seed = seed
        self.overlay_path = Path(overlay_path) if overlay_path else None
        self.session_log: list[tuple[str, str, str]] = []
        self._lock = threading.Lock()
        self._live: dict[str, OverlayEntry] = {}
        self._tombstoned: set[str] = set()
        if self.overlay_path and self.overlay_path.exists():
            self._replay(self.overlay_path)

    def _replay(self, path: Path) -> None:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
            op, entry_id = fields[0], fields[1]
            if op == "add":
                self._live[entry_id] = OverlayEntry(entry_id, *fields[2:])
                self._tombstoned.discard(entry_id)
            elif op == "del":
                self._live.pop(entry_id, None)
                self._tombstoned.add(entry_id)
            else:
                raise ValueError(f"{path}:{lineno}: unknown op {op!r}")

    def _append(self, op: str, entry: OverlayEntry) -> None:
        if self.overlay_path is None:
            return
        row = "\t".join(
            (op, entry.id, entry.mention, entry.relation, entry.vertex,
             entry.direction, entry.timestamp, entry.provenance)
        )
        with open(self.overlay_path, "a", encoding="utf-8") as fh:
            fh.write(row + "\n")

    def _log(self, op: str, entry_id: str) -> None:
        self.session_log.append((datetime.now(timezone.utc).isoformat(), op, entry_id))

    def accept(
        self,
        mention: str,
        relation: str,
        vertex: str,
        direction: str,
        provenance: str = "workbench",
    ) -> tuple[OverlayEntry, bool]:
        """Add a proposal; re-accepting the exact same content is a no-op
        that returns the existing entry. Returns (entry, created)."""
        entry_id = overlay_id(mention, relation, vertex, direction)
        with self._lock:
            existing = self._live.get(entry_id)
            if existing is not None:
                return existing, False
            entry = OverlayEntry(
                entry_id,
                mention,
                relation,
                vertex,
                direction,
                datetime.now(timezone.utc).isoformat(),
                provenance,
            )
            self._live[entry_id] = entry
            self._tombstoned.discard(entry_id)
            self._append("add", entry)
            self._log("add", entry_id)
            return entry, True

    def remove(self, entry_id: str) -> OverlayEntry:
        with self._lock:
            entry = self._live.pop(entry_id, None)
            if entry is None:
                raise KeyError(entry_id)
            self._tombstoned.add(entry_id)
            self._append("del", entry)
            self._log("del", entry_id)
            return entry

    def live_entries(self) -> list[OverlayEntry]:
        return sorted(self._live.values(), key=lambda e: (e.mention, e.relation, e.vertex, e.direction))

    def tombstone_count(self) -> int:
        return len(self._tombstoned)

    def export_tasks(self) -> str:
        """The accepted overlay in the on-disk task-file format."""
        lines = [f"# {TASKS_HEADER}"]
        for entry in self.live_entries():
            lines.append(f"{entry.mention}\t{entry.relation}\t{entry.vertex}\t{entry.direction}")
        return "\n".join(lines) + "\n"

    def export_overlay(self, path: str | Path) -> None:
        Path(path).write_text(self.export_tasks(), encoding="utf-8")


def _ok(data, status_code: int = 200) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"data": data, "error": None})


def _fail(status_code: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={"data": None, "error": {"code": code, "message": message}},
    )


def _check_query(ws: Workspace, relation: str, direction: str) -> JSONResponse | None:
    if relation not in ws.bundle.closed.graph.relations:
        return _fail(404, "unknown-relation", f"relation {relation!r} is not in the bundle")
    if direction not in DIRECTIONS:
        return _fail(400, "bad-direction", f"direction must be head or tail, got {direction!r}")
    return None


def create_app(workspace: Workspace) -> FastAPI:
    app = FastAPI(title="kglink workbench", docs_url=None, redoc_url=None)
    ws = workspace
    bundle = ws.bundle
    part = bundle.split(ws.split)
    context_info = {
        cid: {
            "mention": rec.mention,
            "surface": part.mentions.surface_of[rec.mention],
            "sentence": rec.sentence,
        }
        for cid, rec in part.contexts.with_ids()
    }
    labels = bundle.closed.graph.vertices

    @app.get("/stats")
    def stats():
        return _ok(
            {
                "split": ws.split,
                "bundle": stats_report(bundle),
                "engines": {
                    "neural": ws.model is not None,
                    "bm25-ranking": ws.ranking_index is not None,
                    "bm25-linking": ws.linking_index is not None,
                },
                "overlay": {
                    "live": len(ws.live_entries()),
                    "tombstoned": ws.tombstone_count(),
                    "session-actions": len(ws.session_log),
                },
            }
        )

    @app.get("/ranking")
    def ranking(
        vertex: str,
        relation: str,
        direction: str,
        engine: str = "neural",
        limit: int = 25,
        offset: int = 0,
    ):
        problem = _check_query(ws, relation, direction)
        if problem:
            return problem
        if vertex not in set(bundle.closed_vertices()):
            return _fail(404, "unknown-vertex", f"vertex {vertex!r} is not closed-world")
        if limit < 0 or offset < 0:
            return _fail(400, "bad-window", "limit and offset must be non-negative")
        if engine == "neural":
            if ws.model is None:
                return _fail(400, "engine-unavailable", "no model is loaded")
            ranked = rank_contexts_neural(
                ws.model, bundle, vertex, relation, direction, seed=ws.seed, split=ws.split
            ).items
        elif engine == "bm25":
            if ws.ranking_index is None:
                return _fail(400, "engine-unavailable", "no context index is loaded")
            ranked = rank_contexts_bow(
                bundle, ws.ranking_index, vertex, relation, direction, seed=ws.seed
            )
        else:
            return _fail(400, "unknown-engine", f"engine must be neural or bm25, got {engine!r}")
        window = ranked[offset : offset + limit]
        items = [
            {
                "rank": offset + i,
                "id": cid,
                "score": float(score),
                "mention": context_info[cid]["mention"],
                "surface": context_info[cid]["surface"],
                "sentence": context_info[cid]["sentence"],
            }
            for i, (cid, score) in enumerate(window, start=1)
        ]
        return _ok(
            {
                "query": {
                    "vertex": vertex,
                    "relation": relation,
                    "direction": direction,
                    "engine": engine,
                },
                "total": len(ranked),
                "offset": offset,
                "items": items,
            }
        )

    @app.get("/linking")
    def linking(
        mention: str,
        relation: str,
        direction: str,
        engine: str = "neural",
        limit: int = 25,
    ):
        problem = _check_query(ws, relation, direction)
        if problem:
            return problem
        if mention not in part.mentions.vertex_of:
            return _fail(404, "unknown-mention", f"mention {mention!r} is not in this split")
        if limit < 0:
            return _fail(400, "bad-window", "limit must be non-negative")
        if not part.contexts.by_mention(mention):
            return _fail(409, "no-contexts", f"mention {mention!r} has no contexts to encode")
        if engine == "neural":
            if ws.model is None:
                return _fail(400, "engine-unavailable", "no model is loaded")
            ranked = link_rank_neural(
                ws.model, bundle, mention, relation, direction, seed=ws.seed
            ).items
        elif engine == "bm25":
            if ws.linking_index is None:
                return _fail(400, "engine-unavailable", "no vertex index is loaded")
            ranked = link_mention_bow(
                bundle, ws.linking_index, mention, relation, direction, seed=ws.seed
            )
        else:
            return _fail(400, "unknown-engine", f"engine must be neural or bm25, got {engine!r}")
        items = [
            {
                "rank": i,
                "vertex": vid,
                "label": labels.get(vid, ""),
                "score": float(score),
            }
            for i, (vid, score) in enumerate(ranked[:limit], start=1)
        ]
        return _ok(
            {
                "query": {
                    "mention": mention,
                    "surface": part.mentions.surface_of[mention],
                    "relation": relation,
                    "direction": direction,
                    "engine": engine,
                },
                "total": len(ranked),
                "items": items,
            }
        )

    @app.get("/triples")
    def triples():
        return _ok(
            {
                "items": [
                    {
                        "id": e.id,
                        "mention": e.mention,
                        "relation": e.relation,
                        "vertex": e.vertex,
                        "direction": e.direction,
                        "timestamp": e.timestamp,
                        "provenance": e.provenance,
                    }
                    for e in ws.live_entries()
                ]
            }
        )

    @app.post("/triples")
    def accept_triple(payload: dict):
        missing = [k for k in ("mention", "relation", "vertex", "direction") if k not in payload]
        if missing:
            return _fail(400, "missing-field", f"missing fields: {', '.join(missing)}")
        mention = payload["mention"]
        relation = payload["relation"]
        vertex = payload["vertex"]
        direction = payload["direction"]
        problem = _check_query(ws, relation, direction)
        if problem:
            return problem
        if mention not in part.mentions.vertex_of:
            return _fail(404, "unknown-mention", f"mention {mention!r} is not in this split")
        if vertex not in set(bundle.closed_vertices()):
            return _fail(404, "unknown-vertex", f"vertex {vertex!r} is not closed-world")
        provenance = payload.get("provenance", "workbench")
        entry, created = ws.accept(mention, relation, vertex, direction, provenance)
        return _ok(
            {
                "id": entry.id,
                "created": created,
                "mention": entry.mention,
                "relation": entry.relation,
                "vertex": entry.vertex,
                "direction": entry.direction,
                "timestamp": entry.timestamp,
                "provenance": entry.provenance,
            },
            status_code=201 if created else 200,
        )

    @app.delete("/triples/{entry_id}")
    def remove_triple(entry_id: str):
        try:
            entry = ws.remove(entry_id)
        except KeyError:
            return _fail(404, "unknown-triple", f"no accepted triple with id {entry_id!r}")
        return _ok({"id": entry.id, "removed": True})

    @app.get("/export")
    def export():
        return PlainTextResponse(
            content=ws.export_tasks(), media_type="text/tab-separated-values"
        )

    return app
