"""Load and save dataset bundles as a directory of TSV files.

Layout (UTF-8, one record per line, '#' comments and blank lines skipped):

    vertices.tsv                    id <TAB> label
    relations.tsv                   id <TAB> label
    triples.closed.tsv              head <TAB> relation <TAB> tail
    mentions.<split>.tsv            mention <TAB> vertex <TAB> surface
    contexts.<split>.tsv[.gz]       mention <TAB> origin <TAB> sentence
    tasks.open-<name>.tsv           mention <TAB> relation <TAB> vertex <TAB> direction

where <split> is one of closed, open-validation, open-test. Context files
may be gzip-compressed; loading picks whichever of the two suffixes exists.
Files are written in sorted order so that save/load round-trips are
byte-stable.

Raw sources (inputs to the dataset builder) use the same conventions:

    vertices.tsv / relations.tsv    id <TAB> label
    triples.tsv                     head <TAB> relation <TAB> tail
    records.tsv[.gz]                vertex <TAB> surface <TAB> origin <TAB> sentence
"""

from __future__ import annotations

import gzip
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .builder import IngestionRecord
from .core import (
    ClosedWorld,
    ContextRecord,
    ContextStore,
    DatasetBundle,
    KnowledgeGraph,
    MentionMap,
    OpenSplit,
    TaskTriple,
)

SPLITS = ("closed", "open-validation", "open-test")


class StorageError(ValueError):
    """Malformed bundle file; message carries path and line number."""


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _resolve(directory: Path, name: str, required: bool = True) -> Path | None:
    """Pick ``name`` or ``name.gz`` inside ``directory``, preferring the plain file."""
    plain = directory / name
    if plain.exists():
        return plain
    packed = directory / (name + ".gz")
    if packed.exists():
        return packed
    if required:
        raise StorageError(f"{plain}: file not found (also tried .gz)")
    return None


def _read_rows(path: Path, n_fields: int) -> Iterator[tuple[int, list[str]]]:
    with _open_text(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise StorageError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(fields)}"
                )
            yield lineno, fields


def _read_labelled(path: Path, kind: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, (ident, label) in _read_rows(path, 2):
        if ident in out:
            raise StorageError(f"{path}:{lineno}: duplicate {kind} id {ident!r}")
        out[ident] = label
    return out


def _read_triples(path: Path) -> frozenset[tuple[str, str, str]]:
    return frozenset((h, r, t) for _, (h, r, t) in _read_rows(path, 3))


def _read_mentions(path: Path) -> MentionMap:
    vertex_of: dict[str, str] = {}
    surface_of: dict[str, str] = {}
    for lineno, (mention, vertex, surface) in _read_rows(path, 3):
        if mention in vertex_of:
            raise StorageError(f"{path}:{lineno}: duplicate mention id {mention!r}")
        vertex_of[mention] = vertex
        surface_of[mention] = surface
    return MentionMap(vertex_of=vertex_of, surface_of=surface_of)


def _read_contexts(path: Path) -> ContextStore:
    records = [
        ContextRecord(mention=m, sentence=sentence, origin=origin)
        for _, (m, origin, sentence) in _read_rows(path, 3)
    ]
    return ContextStore(records)


def _read_tasks(path: Path) -> frozenset[TaskTriple]:
    tasks = set()
    for lineno, (mention, relation, vertex, direction) in _read_rows(path, 4):
        if direction not in ("head", "tail"):
            raise StorageError(f"{path}:{lineno}: direction must be head or tail, got {direction!r}")
        tasks.add(TaskTriple(mention=mention, relation=relation, vertex=vertex, direction=direction))
    return frozenset(tasks)


def load_bundle(directory: str | Path, validate: bool = True) -> DatasetBundle:
    """Read a bundle directory; raises :class:`StorageError` on malformed files.

    With ``validate`` (the default) the loaded bundle is also checked for
    referential integrity and split disjointness.
    """
    d = Path(directory)
    if not d.is_dir():
        raise StorageError(f"{d}: not a directory")

    graph = KnowledgeGraph(
        vertices=_read_labelled(_resolve(d, "vertices.tsv"), "vertex"),
        relations=_read_labelled(_resolve(d, "relations.tsv"), "relation"),
        triples=_read_triples(_resolve(d, "triples.closed.tsv")),
    )
    closed = ClosedWorld(
        graph=graph,
        mentions=_read_mentions(_resolve(d, "mentions.closed.tsv")),
        contexts=_read_contexts(_resolve(d, "contexts.closed.tsv")),
    )

    def open_split(name: str) -> OpenSplit:
        return OpenSplit(
            mentions=_read_mentions(_resolve(d, f"mentions.{name}.tsv")),
            contexts=_read_contexts(_resolve(d, f"contexts.{name}.tsv")),
            task_triples=_read_tasks(_resolve(d, f"tasks.{name}.tsv")),
        )

    bundle = DatasetBundle(
        closed=closed,
        open_validation=open_split("open-validation"),
        open_test=open_split("open-test"),
    )
    if validate:
        bundle.check()
    return bundle


def _write_rows(path: Path, rows: Iterable[tuple[str, ...]], header: str) -> None:
    with _open_text(path, "w") as fh:
        fh.write(f"# {header}\n")
        for row in rows:
            for field in row:
                if "\t" in field or "\n" in field or "\r" in field:
                    raise StorageError(f"{path}: field {field!r} contains tab or newline")
            fh.write("\t".join(row) + "\n")


def save_bundle(bundle: DatasetBundle, directory: str | Path, compress_contexts: bool = False) -> None:
    """Write ``bundle`` under ``directory`` (created if missing).

    ``compress_contexts`` switches the three context files to gzip. All
    files are sorted, so saving the same bundle twice yields identical bytes.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    graph = bundle.closed.graph
    _write_rows(d / "vertices.tsv", sorted(graph.vertices.items()), "vertex id, label")
    _write_rows(d / "relations.tsv", sorted(graph.relations.items()), "relation id, label")
    _write_rows(d / "triples.closed.tsv", sorted(graph.triples), "head, relation, tail")

    ext = ".tsv.gz" if compress_contexts else ".tsv"

    def write_mentions(name: str, mentions: MentionMap) -> None:
        rows = [(m, mentions.vertex_of[m], mentions.surface_of[m]) for m in sorted(mentions.vertex_of)]
        _write_rows(d / f"mentions.{name}.tsv", rows, "mention id, vertex id, surface")

    def write_contexts(name: str, contexts: ContextStore) -> None:
        rows = [(r.mention, r.origin, r.sentence) for r in contexts.records]
        _write_rows(d / f"contexts.{name}{ext}", rows, "mention id, origin, sentence")
        stale = d / f"contexts.{name}{'.tsv' if compress_contexts else '.tsv.gz'}"
        stale.unlink(missing_ok=True)

    write_mentions("closed", bundle.closed.mentions)
    write_contexts("closed", bundle.closed.contexts)
    for name in ("open-validation", "open-test"):
        sp = bundle.split(name.removeprefix("open-"))
        write_mentions(name, sp.mentions)
        write_contexts(name, sp.contexts)
        rows = sorted(
            (t.mention, t.relation, t.vertex, t.direction) for t in sp.task_triples
        )
        _write_rows(d / f"tasks.{name}.tsv", rows, "mention id, relation, vertex, direction")


TASKS_HEADER = "mention id, relation, vertex, direction"


def load_source_graph(directory: str | Path) -> KnowledgeGraph:
    """Read a raw (pre-split) graph: vertices.tsv, relations.tsv, triples.tsv."""
    d = Path(directory)
    if not d.is_dir():
        raise StorageError(f"{d}: not a directory")
    return KnowledgeGraph(
        vertices=_read_labelled(_resolve(d, "vertices.tsv"), "vertex"),
        relations=_read_labelled(_resolve(d, "relations.tsv"), "relation"),
        triples=_read_triples(_resolve(d, "triples.tsv")),
    )


def load_ingestion(path: str | Path) -> tuple[IngestionRecord, ...]:
    """Read mention-context ingestion records (vertex, surface, origin, sentence)."""
    return tuple(
        IngestionRecord(vertex=v, mention_surface=surface, sentence=sentence, origin=origin)
        for _, (v, surface, origin, sentence) in _read_rows(Path(path), 4)
    )


def save_source_graph(graph: KnowledgeGraph, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_rows(d / "vertices.tsv", sorted(graph.vertices.items()), "vertex id, label")
    _write_rows(d / "relations.tsv", sorted(graph.relations.items()), "relation id, label")
    _write_rows(d / "triples.tsv", sorted(graph.triples), "head, relation, tail")


def save_ingestion(records: Iterable[IngestionRecord], path: str | Path) -> None:
    rows = [(r.vertex, r.mention_surface, r.origin, r.sentence) for r in records]
    _write_rows(Path(path), rows, "vertex id, surface, origin, sentence")
