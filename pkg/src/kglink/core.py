"""Domain model for graphs, mentions, text contexts, and dataset bundles.

Loaded bundles are immutable: every container is a plain frozen dataclass
over tuples/frozensets/dicts that are never mutated after construction, so
they can be shared freely across threads. Mutation means building a new
bundle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

VertexId = str
RelationId = str
MentionId = str

HEAD = "head"
TAIL = "tail"
DIRECTIONS = (HEAD, TAIL)


class BundleError(ValueError):
    """Raised when bundle data violates an invariant.

    ``violations`` enumerates every detected problem, not just the first.
    """

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class KnowledgeGraph:
    """A directed multi-relational graph with labelled vertices and relations."""

    vertices: Mapping[VertexId, str]
    relations: Mapping[RelationId, str]
    triples: frozenset[tuple[VertexId, RelationId, VertexId]]

    def validate(self) -> list[str]:
        problems = []
        for h, r, t in sorted(self.triples):
            if h not in self.vertices:
                problems.append(f"triple ({h},{r},{t}): unknown head vertex {h!r}")
            if r not in self.relations:
                problems.append(f"triple ({h},{r},{t}): unknown relation {r!r}")
            if t not in self.vertices:
                problems.append(f"triple ({h},{r},{t}): unknown tail vertex {t!r}")
        return problems

    def neighbours(self, vertex: VertexId) -> list[tuple[VertexId, RelationId, VertexId]]:
        """All triples in which ``vertex`` occurs as head or tail."""
        return sorted(t for t in self.triples if t[0] == vertex or t[2] == vertex)


@dataclass(frozen=True)
class RelationStats:
    dom: int
    rg: int
    triples: int


def graph_stats(graph: KnowledgeGraph) -> dict[RelationId, RelationStats]:
    """Per-relation head count (dom), tail count (rg), and triple count.

    Relations without triples are included with all-zero stats.
    """
    heads: dict[RelationId, set[VertexId]] = {r: set() for r in graph.relations}
    tails: dict[RelationId, set[VertexId]] = {r: set() for r in graph.relations}
    counts: dict[RelationId, int] = {r: 0 for r in graph.relations}
    for h, r, t in graph.triples:
        heads[r].add(h)
        tails[r].add(t)
        counts[r] += 1
    return {
        r: RelationStats(dom=len(heads[r]), rg=len(tails[r]), triples=counts[r])
        for r in graph.relations
    }


@dataclass(frozen=True)
class MentionMap:
    """Mentions are vertex-scoped: each mention id belongs to exactly one vertex.

    Identical surface strings under different vertices are distinct mentions
    (ambiguous surfaces stay ambiguous).
    """

    vertex_of: Mapping[MentionId, VertexId]
    surface_of: Mapping[MentionId, str]

    def __len__(self) -> int:
        return len(self.vertex_of)

    def ids(self) -> tuple[MentionId, ...]:
        return tuple(sorted(self.vertex_of))

    def mentions_of(self, vertex: VertexId) -> tuple[MentionId, ...]:
        return tuple(sorted(m for m, v in self.vertex_of.items() if v == vertex))

    def vertices(self) -> frozenset[VertexId]:
        return frozenset(self.vertex_of.values())

    def validate(self) -> list[str]:
        problems = []
        for m in sorted(self.vertex_of):
            if m not in self.surface_of:
                problems.append(f"mention {m!r}: missing surface")
        for m in sorted(self.surface_of):
            if m not in self.vertex_of:
                problems.append(f"mention {m!r}: surface without vertex assignment")
            elif not self.surface_of[m]:
                problems.append(f"mention {m!r}: empty surface")
        return problems


@dataclass(frozen=True)
class ContextRecord:
    mention: MentionId
    sentence: str
    origin: str


@dataclass(frozen=True)
class ContextStore:
    """Sentences that contain mentions, ordered canonically.

    Records are sorted by (mention, origin, sentence) at construction so
    that save/load round-trips are byte-stable and context ids (positional
    per mention) are reproducible.
    """

    records: tuple[ContextRecord, ...]

    def __init__(self, records: Iterable[ContextRecord]):
        ordered = tuple(sorted(records, key=lambda c: (c.mention, c.origin, c.sentence)))
        object.__setattr__(self, "records", ordered)

    def __len__(self) -> int:
        return len(self.records)

    def with_ids(self) -> tuple[tuple[str, ContextRecord], ...]:
        """Pairs of (context id, record); id = ``<mention>::<n>`` in canonical order."""
        out = []
        counter: dict[MentionId, int] = {}
        for rec in self.records:
            n = counter.get(rec.mention, 0)
            counter[rec.mention] = n + 1
            out.append((f"{rec.mention}::{n}", rec))
        return tuple(out)

    def by_mention(self, mention: MentionId) -> tuple[ContextRecord, ...]:
        return tuple(r for r in self.records if r.mention == mention)

    def mentions(self) -> frozenset[MentionId]:
        return frozenset(r.mention for r in self.records)

    def validate(self, mentions: MentionMap) -> list[str]:
        problems = []
        for i, rec in enumerate(self.records):
            where = f"context #{i} (mention {rec.mention!r})"
            if rec.mention not in mentions.vertex_of:
                problems.append(f"{where}: unknown mention id")
            if not rec.sentence:
                problems.append(f"{where}: empty sentence")
            elif "\n" in rec.sentence or "\r" in rec.sentence:
                problems.append(f"{where}: sentence is not single-line")
        return problems


@dataclass(frozen=True)
class TaskTriple:
    """Ground-truth unit shared by the ranking and linking tasks.

    ``direction`` names the slot of the stored closed-world ``vertex`` in the
    underlying graph triple: ``tail`` means the mention's entity is the head
    (so linking predicts tails), ``head`` means the mention's entity is the
    tail (linking predicts heads).
    """

    mention: MentionId
    relation: RelationId
    vertex: VertexId
    direction: str


@dataclass(frozen=True)
class OpenSplit:
    """Open-world mentions, their query corpus, and the task triples."""

    mentions: MentionMap
    contexts: ContextStore
    task_triples: frozenset[TaskTriple]


@dataclass(frozen=True)
class ClosedWorld:
    """Closed-world graph plus its training mentions and text."""

    graph: KnowledgeGraph
    mentions: MentionMap
    contexts: ContextStore


@dataclass(frozen=True)
class DatasetBundle:
    """Closed-world training data plus open-world validation/test splits.

    The graph's vertex map is the full id universe (open-only vertices
    included, so open mentions resolve); the *closed-world* vertices are the
    ones backed by at least one closed mention, see ``closed_vertices``.
    """

    closed: ClosedWorld
    open_validation: OpenSplit
    open_test: OpenSplit

    def closed_vertices(self) -> tuple[VertexId, ...]:
        """Sorted vertices with at least one closed-world mention.

        These are the linking candidates and the rows of any embedding model
        bound to this bundle.
        """
        return tuple(sorted(self.closed.mentions.vertices()))

    def relation_ids(self) -> tuple[RelationId, ...]:
        return tuple(sorted(self.closed.graph.relations))

    def split(self, name: str) -> OpenSplit:
        if name == "validation":
            return self.open_validation
        if name == "test":
            return self.open_test
        raise ValueError(f"unknown split {name!r} (expected 'validation' or 'test')")

    def validate(self) -> list[str]:
        problems = []
        problems += self.closed.graph.validate()
        problems += [f"closed mentions: {p}" for p in self.closed.mentions.validate()]
        problems += [f"closed contexts: {p}" for p in self.closed.contexts.validate(self.closed.mentions)]

        closed_ids = set(self.closed.mentions.vertex_of)
        split_ids = {}
        for name in ("validation", "test"):
            sp = self.split(name)
            problems += [f"open-{name} mentions: {p}" for p in sp.mentions.validate()]
            problems += [f"open-{name} contexts: {p}" for p in sp.contexts.validate(sp.mentions)]
            split_ids[name] = set(sp.mentions.vertex_of)

        for name, ids in split_ids.items():
            overlap = sorted(closed_ids & ids)
            for m in overlap:
                problems.append(f"mention {m!r} appears in both closed and open-{name}")
        for m in sorted(split_ids["validation"] & split_ids["test"]):
            problems.append(f"mention {m!r} appears in both open splits")

        vertices = self.closed.graph.vertices
        closed_world = set(self.closed.mentions.vertices())
        for name in ("validation", "test"):
            sp = self.split(name)
            for m in sorted(sp.mentions.vertex_of):
                if sp.mentions.vertex_of[m] not in vertices:
                    problems.append(
                        f"open-{name} mention {m!r}: unknown vertex {sp.mentions.vertex_of[m]!r}"
                    )
            for tt in sorted(sp.task_triples, key=lambda t: (t.mention, t.relation, t.vertex)):
                where = f"open-{name} task ({tt.mention},{tt.relation},{tt.vertex},{tt.direction})"
                if tt.mention not in sp.mentions.vertex_of:
                    problems.append(f"{where}: mention not in this split")
                if tt.relation not in self.closed.graph.relations:
                    problems.append(f"{where}: unknown relation")
                if tt.vertex not in vertices:
                    problems.append(f"{where}: unknown vertex")
                elif tt.vertex not in closed_world:
                    problems.append(f"{where}: vertex has no closed-world mention")
                if tt.direction not in DIRECTIONS:
                    problems.append(f"{where}: bad direction (expected head|tail)")
        return problems

    def check(self) -> None:
        """Raise :class:`BundleError` enumerating all violations, if any."""
        problems = self.validate()
        if problems:
            raise BundleError(problems)


def empty_mentions() -> MentionMap:
    return MentionMap(vertex_of={}, surface_of={})


def empty_contexts() -> ContextStore:
    return ContextStore(())


def empty_split() -> OpenSplit:
    return OpenSplit(mentions=empty_mentions(), contexts=empty_contexts(), task_triples=frozenset())
