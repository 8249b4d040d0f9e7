"""Construct dataset bundles from a raw graph and mention-context records.

The pipeline has four stages, each usable on its own:

1. relation selection: order relations by the head/tail disproportion ratio
   and keep the configured number, the most skewed of which become concept
   relations whose vertices stay closed-world;
2. harvest: aggregate ingestion records into mentions (one per vertex and
   case-folded surface) with their context sentences;
3. split: assign mentions to closed/open worlds per vertex, derive the
   closed triple set and the open-world task triples;
4. reporting: count everything for comparison against reference tables.
"""

from __future__ import annotations

import hashlib
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    ClosedWorld,
    ContextRecord,
    ContextStore,
    DatasetBundle,
    KnowledgeGraph,
    MentionMap,
    OpenSplit,
    RelationId,
    RelationStats,
    TaskTriple,
    VertexId,
    graph_stats,
)


class BuildError(ValueError):
    pass


def stable_hash(text: str) -> int:
    """Process-independent 64-bit hash, used to derive per-key RNG streams."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class IngestionRecord:
    vertex: VertexId
    mention_surface: str
    sentence: str
    origin: str


@dataclass(frozen=True)
class BuildConfig:
    """Knobs controlling relation selection and the mention-level split.

    ``closed_world_threshold`` caps closed-world mentions per non-concept
    vertex (None = unlimited). ``target_mention_split`` is the fraction of
    each vertex's mentions kept closed-world; ``target_validation_split``
    the fraction of open-world mentions assigned to validation.
    """

    concept_relation_count: int
    total_relation_count: int
    closed_world_threshold: int | None
    target_mention_split: float
    target_validation_split: float
    mention_threshold: int
    seed: int

    def __post_init__(self):
        if self.concept_relation_count < 0 or self.total_relation_count < 0:
            raise BuildError("relation counts must be non-negative")
        if self.concept_relation_count > self.total_relation_count:
            raise BuildError("concept_relation_count exceeds total_relation_count")
        for name in ("target_mention_split", "target_validation_split"):
            frac = getattr(self, name)
            if not 0.0 < frac < 1.0:
                raise BuildError(f"{name} must lie in (0,1), got {frac}")
        if self.closed_world_threshold is not None and self.closed_world_threshold < 0:
            raise BuildError("closed_world_threshold must be >= 0")
        if self.mention_threshold < 0:
            raise BuildError("mention_threshold must be >= 0")


@dataclass(frozen=True)
class RelationOverrides:
    """Manual relation picks; either field may be left None to use the ratio rule."""

    concept: tuple[RelationId, ...] | None = None
    kept: tuple[RelationId, ...] | None = None


def relation_ratio(stats: Mapping[RelationId, RelationStats]) -> dict[RelationId, float]:
    """min(dom, rg) / max(dom, rg) per relation; symmetric, in [0, 1].

    Relations without triples have no defined ratio and are dropped with a
    warning.
    """
    ratios: dict[RelationId, float] = {}
    skipped = []
    for r, s in stats.items():
        if s.dom == 0 and s.rg == 0:
            skipped.append(r)
            continue
        ratios[r] = min(s.dom, s.rg) / max(s.dom, s.rg)
    if skipped:
        warnings.warn(f"relations without triples excluded from ratios: {sorted(skipped)}")
    return ratios


def select_relations(
    ratios: Mapping[RelationId, float],
    config: BuildConfig,
    manual_overrides: RelationOverrides | None = None,
) -> tuple[list[RelationId], set[RelationId]]:
    """Pick kept and concept relations, smallest ratio first, ties by id.

    Overrides replace the corresponding computed list wholesale; they must
    name known relations and concept must stay a subset of kept.
    """
    ordered = sorted(ratios, key=lambda r: (ratios[r], r))
    overrides = manual_overrides or RelationOverrides()

    for named in (overrides.concept or ()), (overrides.kept or ()):
        unknown = [r for r in named if r not in ratios]
        if unknown:
            raise BuildError(f"override names unknown relations: {unknown}")

    if overrides.kept is not None:
        kept = set(overrides.kept)
    else:
        if config.total_relation_count > len(ordered):
            raise BuildError(
                f"total_relation_count {config.total_relation_count} exceeds "
                f"{len(ordered)} relations with a defined ratio"
            )
        kept = set(ordered[: config.total_relation_count])

    if overrides.concept is not None:
        concept = list(overrides.concept)
    else:
        concept = [r for r in ordered if r in kept][: config.concept_relation_count]

    stray = [r for r in concept if r not in kept]
    if stray:
        raise BuildError(f"concept relations not among kept relations: {stray}")
    return concept, kept


def concept_vertices(graph: KnowledgeGraph, concept_relations: Iterable[RelationId]) -> set[VertexId]:
    """Union over concept relations of the vertices on the minority side.

    Minority side = tails when rg(r) <= dom(r), else heads; these are the
    few shared endpoints (professions, countries) that anchor the closed
    world.
    """
    concept = set(concept_relations)
    unknown = concept - set(graph.relations)
    if unknown:
        raise BuildError(f"concept relations not in graph: {sorted(unknown)}")
    stats = graph_stats(graph)
    out: set[VertexId] = set()
    for r in concept:
        side = 2 if stats[r].rg <= stats[r].dom else 0
        out.update(t[side] for t in graph.triples if t[1] == r)
    return out


@dataclass
class HarvestReport:
    records_seen: int = 0
    records_skipped_surface: int = 0
    mentions_dropped_threshold: int = 0
    contexts_dropped_threshold: int = 0


_SLUG_RE = re.compile(r"[^0-9a-z]+")


def _slug(surface: str) -> str:
    return _SLUG_RE.sub("-", surface.casefold()).strip("-") or "m"


def harvest(
    records: Iterable[IngestionRecord], mention_threshold: int
) -> tuple[MentionMap, ContextStore, HarvestReport]:
    """Aggregate records into mentions and contexts.

    Mention identity is (vertex, case-folded surface); ids are
    ``<vertex>:<surface slug>`` with a numeric suffix on slug collisions.
    Records whose sentence does not contain the surface (case-insensitive)
    are skipped and counted; mentions with fewer than ``mention_threshold``
    contexts are dropped together with their contexts.
    """
    report = HarvestReport()
    by_key: dict[tuple[VertexId, str], list[IngestionRecord]] = {}
    for rec in records:
        report.records_seen += 1
        if rec.mention_surface.casefold() not in rec.sentence.casefold():
            report.records_skipped_surface += 1
            continue
        by_key.setdefault((rec.vertex, rec.mention_surface.casefold()), []).append(rec)

    vertex_of: dict[str, VertexId] = {}
    surface_of: dict[str, str] = {}
    contexts: list[ContextRecord] = []
    taken: set[str] = set()
    for (vertex, folded), recs in sorted(by_key.items()):
        if len(recs) < mention_threshold:
            report.mentions_dropped_threshold += 1
            report.contexts_dropped_threshold += len(recs)
            continue
        base = f"{vertex}:{_slug(folded)}"
        mention, n = base, 1
        while mention in taken:
            n += 1
            mention = f"{base}-{n}"
        taken.add(mention)
        vertex_of[mention] = vertex
        surface_of[mention] = folded
        contexts.extend(
            ContextRecord(mention=mention, sentence=r.sentence, origin=r.origin) for r in recs
        )
    mentions = MentionMap(vertex_of=vertex_of, surface_of=surface_of)
    return mentions, ContextStore(contexts), report


def _split_counts(n: int, fraction: float, cap: int | None) -> int:
    closed = round_half_up(fraction * n)
    if cap is not None:
        closed = min(closed, cap)
    return closed


def split(
    graph: KnowledgeGraph,
    mentions: MentionMap,
    contexts: ContextStore,
    config: BuildConfig,
    concept: frozenset[VertexId] | set[VertexId] = frozenset(),
) -> DatasetBundle:
    """Assign mentions to worlds and derive closed triples plus task triples.

    Rules, in order:

    a. every mention of a concept vertex is closed-world;
    b. each other vertex's mentions split independently at random (seeded
       per vertex, so the outcome is iteration-order free), a
       ``target_mention_split`` fraction staying closed;
    c. ``closed_world_threshold`` caps closed mentions per non-concept
       vertex, excess goes open-world;
    d. closed triples = triples whose endpoints both kept a closed mention;
    e. an open mention of v yields a task triple per graph triple through v
       whose other endpoint stayed closed-world: (v,r,t) gives (m,r,t,tail)
       and (h,r,v) gives (m,r,h,head);
    f. open mentions split globally into validation/test by
       ``target_validation_split``.
    """
    closed_ids: list[str] = []
    open_ids: list[str] = []
    for vertex in sorted(mentions.vertices()):
        ids = list(mentions.mentions_of(vertex))
        if vertex in concept:
            closed_ids.extend(ids)
            continue
        rng = np.random.default_rng([config.seed, stable_hash(vertex)])
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_closed = _split_counts(len(ids), config.target_mention_split, config.closed_world_threshold)
        closed_ids.extend(order[:n_closed])
        open_ids.extend(order[n_closed:])

    rng = np.random.default_rng([config.seed, stable_hash("validation/test")])
    open_order = sorted(open_ids)
    open_order = [open_order[i] for i in rng.permutation(len(open_order))]
    n_val = round_half_up(config.target_validation_split * len(open_order))
    val_ids = set(open_order[:n_val])
    test_ids = set(open_order[n_val:])

    empty = [
        name
        for name, ids in (
            ("closed", closed_ids),
            ("open-validation", val_ids),
            ("open-test", test_ids),
        )
        if not ids
    ]
    if empty:
        raise BuildError(f"split fractions leave empty splits: {', '.join(empty)}")

    def pick_mentions(ids: set[str] | list[str]) -> MentionMap:
        keep = set(ids)
        return MentionMap(
            vertex_of={m: v for m, v in mentions.vertex_of.items() if m in keep},
            surface_of={m: s for m, s in mentions.surface_of.items() if m in keep},
        )

    def pick_contexts(ids: set[str] | list[str]) -> ContextStore:
        keep = set(ids)
        return ContextStore(r for r in contexts.records if r.mention in keep)

    closed_mentions = pick_mentions(closed_ids)
    closed_world_vertices = closed_mentions.vertices()
    # rule (d); the vertex universe stays intact so open mentions resolve
    closed_graph = KnowledgeGraph(
        vertices=graph.vertices,
        relations=graph.relations,
        triples=frozenset(
            t for t in graph.triples if t[0] in closed_world_vertices and t[2] in closed_world_vertices
        ),
    )

    by_vertex: dict[VertexId, list[str]] = {}
    for m in open_ids:
        by_vertex.setdefault(mentions.vertex_of[m], []).append(m)
    tasks: set[TaskTriple] = set()
    for h, r, t in graph.triples:
        for m in by_vertex.get(h, ()):
            if t in closed_world_vertices:
                tasks.add(TaskTriple(mention=m, relation=r, vertex=t, direction="tail"))
        for m in by_vertex.get(t, ()):
            if h in closed_world_vertices:
                tasks.add(TaskTriple(mention=m, relation=r, vertex=h, direction="head"))

    def open_split(ids: set[str]) -> OpenSplit:
        return OpenSplit(
            mentions=pick_mentions(ids),
            contexts=pick_contexts(ids),
            task_triples=frozenset(t for t in tasks if t.mention in ids),
        )

    return DatasetBundle(
        closed=ClosedWorld(graph=closed_graph, mentions=closed_mentions, contexts=pick_contexts(closed_ids)),
        open_validation=open_split(val_ids),
        open_test=open_split(test_ids),
    )


@dataclass
class BuildReport:
    harvest: HarvestReport = field(default_factory=HarvestReport)
    records_skipped_vertex: int = 0
    relations_without_triples: tuple[RelationId, ...] = ()
    concept_relations: tuple[RelationId, ...] = ()
    kept_relations: tuple[RelationId, ...] = ()
    concept_vertex_count: int = 0


def build_bundle(
    graph: KnowledgeGraph,
    records: Iterable[IngestionRecord],
    config: BuildConfig,
    manual_overrides: RelationOverrides | None = None,
) -> tuple[DatasetBundle, BuildReport]:
    """Run the full pipeline: select relations, harvest, split.

    The graph is restricted to the kept relations and the vertices they
    touch; records for vertices outside the restriction are skipped and
    counted.
    """
    report = BuildReport()
    stats = graph_stats(graph)
    report.relations_without_triples = tuple(
        sorted(r for r, s in stats.items() if s.dom == 0 and s.rg == 0)
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ratios = relation_ratio(stats)
    concept_rels, kept = select_relations(ratios, config, manual_overrides)
    report.concept_relations = tuple(concept_rels)
    report.kept_relations = tuple(sorted(kept))

    triples = frozenset(t for t in graph.triples if t[1] in kept)
    vertices = {v for h, _, t in triples for v in (h, t)}
    sub = KnowledgeGraph(
        vertices={v: graph.vertices[v] for v in sorted(vertices)},
        relations={r: graph.relations[r] for r in sorted(kept)},
        triples=triples,
    )

    concept = concept_vertices(sub, concept_rels)
    report.concept_vertex_count = len(concept)

    def in_universe(rec: IngestionRecord) -> bool:
        if rec.vertex in vertices:
            return True
        report.records_skipped_vertex += 1
        return False

    mentions, contexts, report.harvest = harvest(
        (r for r in records if in_universe(r)), config.mention_threshold
    )
    bundle = split(sub, mentions, contexts, config, concept=concept)
    return bundle, report


def stats_report(bundle: DatasetBundle) -> dict[str, int]:
    """Flat count table mirroring the reference benchmark tables."""
    out: dict[str, int] = {
        "relations": len(bundle.closed.graph.relations),
        "closed-vertices": len(bundle.closed_vertices()),
        "closed-triples": len(bundle.closed.graph.triples),
        "closed-mentions": len(bundle.closed.mentions),
        "closed-contexts": len(bundle.closed.contexts),
    }
    for name in ("validation", "test"):
        sp = bundle.split(name)
        tasks = sp.task_triples
        out[f"{name}-mentions"] = len(sp.mentions)
        out[f"{name}-contexts"] = len(sp.contexts)
        out[f"{name}-task-triples"] = len(tasks)
        out[f"{name}-ranking-queries"] = len({(t.vertex, t.relation) for t in tasks})
        out[f"{name}-linking-queries"] = len({(t.mention, t.relation) for t in tasks})
    return out
