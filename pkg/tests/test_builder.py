"""Dataset builder: relation selection, harvesting, splitting, reporting."""

import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kglink.builder import (
    BuildConfig,
    BuildError,
    IngestionRecord,
    RelationOverrides,
    build_bundle,
    concept_vertices,
    harvest,
    relation_ratio,
    select_relations,
    split,
    stats_report,
)
from kglink.core import KnowledgeGraph, RelationStats, TaskTriple, graph_stats
from kglink.storage import save_bundle

DATA = Path(__file__).parent / "data"


def load_relation_table():
    rows = []
    for line in (DATA / "codex_relations.tsv").read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        rid, label, ratio, heads, tails, triples = line.split("\t")
        rows.append((rid, label, float(ratio), int(heads), int(tails), int(triples)))
    return rows


def make_config(**overrides):
    base = dict(
        concept_relation_count=1,
        total_relation_count=2,
        closed_world_threshold=None,
        target_mention_split=0.7,
        target_validation_split=0.5,
        mention_threshold=0,
        seed=7,
    )
    base.update(overrides)
    return BuildConfig(**base)


class TestRelationRatio:
    def test_reference_table(self):
        rows = load_relation_table()
        assert len(rows) == 51
        stats = {rid: RelationStats(dom=h, rg=t, triples=n) for rid, _, _, h, t, n in rows}
        ratios = relation_ratio(stats)
        for rid, _, printed, _, _, _ in rows:
            unit = 10 ** (math.floor(math.log10(printed)) - 2)
            assert abs(ratios[rid] - printed) <= unit * 1.000001, rid

    def test_zero_triple_relation_excluded_with_warning(self):
        stats = {"r": RelationStats(2, 1, 2), "empty": RelationStats(0, 0, 0)}
        with pytest.warns(UserWarning, match="empty"):
            ratios = relation_ratio(stats)
        assert set(ratios) == {"r"}

    @given(st.integers(1, 10**6), st.integers(1, 10**6))
    def test_symmetric_and_bounded(self, dom, rg):
        a = relation_ratio({"r": RelationStats(dom, rg, 1)})["r"]
        b = relation_ratio({"r": RelationStats(rg, dom, 1)})["r"]
        assert a == b and 0 < a <= 1

    def test_equal_sides_give_one(self):
        assert relation_ratio({"r": RelationStats(17, 17, 20)})["r"] == 1.0


class TestSelectRelations:
    RATIOS = {"a": 0.5, "b": 0.1, "c": 0.1, "d": 0.9}

    def test_smallest_ratios_kept_ties_lexicographic(self):
        concept, kept = select_relations(self.RATIOS, make_config(total_relation_count=3))
        assert kept == {"a", "b", "c"}
        assert concept == ["b"]

    def test_concept_equals_kept_when_counts_equal(self):
        concept, kept = select_relations(
            self.RATIOS, make_config(concept_relation_count=2, total_relation_count=2)
        )
        assert set(concept) == kept == {"b", "c"}

    def test_overrides_win(self):
        concept, kept = select_relations(
            self.RATIOS,
            make_config(),
            RelationOverrides(concept=("d",), kept=("d", "a")),
        )
        assert concept == ["d"] and kept == {"a", "d"}

    def test_override_unknown_relation(self):
        with pytest.raises(BuildError, match="unknown"):
            select_relations(self.RATIOS, make_config(), RelationOverrides(kept=("zz",)))

    def test_concept_outside_kept_rejected(self):
        with pytest.raises(BuildError, match="not among kept"):
            select_relations(self.RATIOS, make_config(), RelationOverrides(concept=("d",)))

    def test_too_few_relations(self):
        with pytest.raises(BuildError, match="exceeds"):
            select_relations({"a": 0.5}, make_config(total_relation_count=2))


class TestConceptVertices:
    def test_minority_side(self):
        g = KnowledgeGraph(
            vertices={v: "" for v in "abcdex"},
            relations={"skewed": "", "other": ""},
            triples=frozenset(
                {("a", "skewed", "x"), ("b", "skewed", "x"), ("c", "skewed", "e"), ("a", "other", "b")}
            ),
        )
        # skewed: dom 3 heads, rg 2 tails -> tails are the minority side
        assert concept_vertices(g, ["skewed"]) == {"x", "e"}

    def test_tie_prefers_tails(self):
        g = KnowledgeGraph(
            vertices={"a": "", "b": ""},
            relations={"r": ""},
            triples=frozenset({("a", "r", "b")}),
        )
        assert concept_vertices(g, ["r"]) == {"b"}

    def test_union_over_relations_and_empty(self):
        g = KnowledgeGraph(
            vertices={v: "" for v in "abcd"},
            relations={"r1": "", "r2": ""},
            triples=frozenset({("a", "r1", "b"), ("c", "r2", "d")}),
        )
        assert concept_vertices(g, ["r1", "r2"]) == {"b", "d"}
        assert concept_vertices(g, []) == set()


class TestHarvest:
    def rec(self, vertex="v", surface="Fargo", sentence=None, origin="w"):
        return IngestionRecord(
            vertex=vertex,
            mention_surface=surface,
            sentence=sentence if sentence is not None else f"I saw {surface} yesterday",
            origin=origin,
        )

    def test_case_folded_surfaces_merge(self):
        records = [self.rec(surface=s) for s in ("Fargo", "fargo", "FARGO")]
        mentions, contexts, report = harvest(records, mention_threshold=0)
        assert len(mentions) == 1
        (mid,) = mentions.ids()
        assert mid == "v:fargo"
        assert len(contexts.by_mention(mid)) == 3
        assert report.records_seen == 3 and report.records_skipped_surface == 0

    def test_sentence_without_surface_skipped(self):
        records = [self.rec(), self.rec(sentence="nothing relevant here")]
        mentions, contexts, report = harvest(records, mention_threshold=0)
        assert len(contexts) == 1
        assert report.records_skipped_surface == 1

    def test_threshold_drops_mention_and_contexts(self):
        records = [self.rec() for _ in range(4)]
        mentions, contexts, report = harvest(records, mention_threshold=5)
        assert len(mentions) == 0 and len(contexts) == 0
        assert report.mentions_dropped_threshold == 1
        # identical records collapse inside the context store, but the drop
        # count reflects raw records
        assert report.contexts_dropped_threshold == 4

    def test_same_surface_different_vertices_distinct(self):
        records = [self.rec(vertex="x"), self.rec(vertex="y")]
        mentions, _, _ = harvest(records, 0)
        assert mentions.ids() == ("x:fargo", "y:fargo")

    def test_slug_collision_gets_counter(self):
        records = [self.rec(surface="a.b"), self.rec(surface="a b")]
        mentions, _, _ = harvest(records, 0)
        assert mentions.ids() == ("v:a-b", "v:a-b-2")
        assert mentions.surface_of["v:a-b"] == "a b"  # sorted key order: "a b" < "a.b"

    def test_empty_stream(self):
        mentions, contexts, report = harvest([], 5)
        assert len(mentions) == 0 and len(contexts) == 0 and report.records_seen == 0


def toy_inputs(n_mentions_per_vertex=10):
    g = KnowledgeGraph(
        vertices={v: v.upper() for v in "abcd"},
        relations={"r1": "", "r2": ""},
        triples=frozenset({("a", "r1", "b"), ("b", "r2", "c"), ("d", "r1", "a")}),
    )
    records = [
        IngestionRecord(v, f"{v}{i}", f"text about {v}{i} here", "w")
        for v in g.vertices
        for i in range(n_mentions_per_vertex)
    ]
    mentions, contexts, _ = harvest(records, 0)
    return g, mentions, contexts


class TestSplit:
    def test_exact_fraction(self):
        g, mentions, contexts = toy_inputs(10)
        bundle = split(g, mentions, contexts, make_config(target_mention_split=0.7))
        for v in g.vertices:
            closed = sum(1 for m in bundle.closed.mentions.vertex_of.values() if m == v)
            assert closed == 7
        assert bundle.validate() == []

    def test_concept_vertices_fully_closed(self):
        g, mentions, contexts = toy_inputs(6)
        bundle = split(g, mentions, contexts, make_config(), concept={"a"})
        assert set(bundle.closed.mentions.mentions_of("a")) == set(mentions.mentions_of("a"))
        for sp in (bundle.open_validation, bundle.open_test):
            assert "a" not in sp.mentions.vertices()

    def test_threshold_caps_non_concept_only(self):
        g, mentions, contexts = toy_inputs(10)
        bundle = split(
            g, mentions, contexts, make_config(closed_world_threshold=2), concept={"a"}
        )
        for v in ("b", "c", "d"):
            assert len(bundle.closed.mentions.mentions_of(v)) == 2
        assert len(bundle.closed.mentions.mentions_of("a")) == 10

    def test_closed_triples_need_both_endpoints(self):
        g, mentions, contexts = toy_inputs(4)
        # starve d of closed mentions entirely
        bundle = split(g, mentions, contexts, make_config(closed_world_threshold=0), concept={"a", "b", "c"})
        assert ("d", "r1", "a") not in bundle.closed.graph.triples
        assert ("a", "r1", "b") in bundle.closed.graph.triples

    def test_task_triples_match_brute_force(self):
        g, mentions, contexts = toy_inputs(8)
        bundle = split(g, mentions, contexts, make_config())
        assert brute_force_tasks(g, bundle) == (
            bundle.open_validation.task_triples | bundle.open_test.task_triples
        )

    def test_determinism_byte_stable(self, tmp_path):
        g, mentions, contexts = toy_inputs(9)
        b1 = split(g, mentions, contexts, make_config(seed=123))
        b2 = split(g, mentions, contexts, make_config(seed=123))
        assert b1 == b2
        save_bundle(b1, tmp_path / "one")
        save_bundle(b2, tmp_path / "two")
        for f in sorted((tmp_path / "one").iterdir()):
            assert f.read_bytes() == (tmp_path / "two" / f.name).read_bytes()

    def test_different_seeds_differ(self):
        g, mentions, contexts = toy_inputs(9)
        b1 = split(g, mentions, contexts, make_config(seed=1))
        b2 = split(g, mentions, contexts, make_config(seed=2))
        assert b1 != b2

    def test_empty_split_errors(self):
        g, mentions, contexts = toy_inputs(2)
        with pytest.raises(BuildError, match="empty"):
            # everything concept -> no open mentions at all
            split(g, mentions, contexts, make_config(), concept=set("abcd"))


def brute_force_tasks(graph, bundle):
    """Independent task-triple derivation from the full triple set and the split."""
    closed_vertices = set(bundle.closed.mentions.vertex_of.values())
    open_mentions = dict(bundle.open_validation.mentions.vertex_of)
    open_mentions.update(bundle.open_test.mentions.vertex_of)
    expected = set()
    for m, v in open_mentions.items():
        for h, r, t in graph.triples:
            if h == v and t in closed_vertices:
                expected.add(TaskTriple(m, r, t, "tail"))
            if t == v and h in closed_vertices:
                expected.add(TaskTriple(m, r, h, "head"))
    return expected


@st.composite
def random_world(draw):
    n_vertices = draw(st.integers(4, 30))
    vertices = [f"v{i}" for i in range(n_vertices)]
    relations = [f"r{i}" for i in range(draw(st.integers(1, 4)))]
    triples = draw(
        st.sets(
            st.tuples(st.sampled_from(vertices), st.sampled_from(relations), st.sampled_from(vertices)),
            min_size=3,
            max_size=60,
        )
    )
    counts = {v: draw(st.integers(0, 6)) for v in vertices}
    concept = draw(st.sets(st.sampled_from(vertices), max_size=3))
    seed = draw(st.integers(0, 2**31))
    return vertices, relations, triples, counts, concept, seed


@settings(max_examples=40, deadline=None)
@given(random_world())
def test_split_properties_on_random_inputs(world):
    vertices, relations, triples, counts, concept, seed = world
    g = KnowledgeGraph(
        vertices={v: "" for v in vertices},
        relations={r: "" for r in relations},
        triples=frozenset(triples),
    )
    records = [
        IngestionRecord(v, f"{v}m{i}", f"s about {v}m{i}", "w")
        for v, n in counts.items()
        for i in range(n)
    ]
    mentions, contexts, _ = harvest(records, 0)
    config = make_config(seed=seed, target_mention_split=0.5, target_validation_split=0.4)
    try:
        bundle = split(g, mentions, contexts, config, concept=concept)
    except BuildError:
        return  # fractions left a split empty; the error is the contract
    # partition: closed + open covers all harvested mentions exactly once
    closed = set(bundle.closed.mentions.vertex_of)
    val = set(bundle.open_validation.mentions.vertex_of)
    test = set(bundle.open_test.mentions.vertex_of)
    assert closed | val | test == set(mentions.vertex_of)
    assert not (closed & val) and not (closed & test) and not (val & test)
    # rule (a): concept mentions never open
    for m in val | test:
        assert mentions.vertex_of[m] not in concept
    # task triples equal the brute-force derivation
    assert brute_force_tasks(g, bundle) == (
        bundle.open_validation.task_triples | bundle.open_test.task_triples
    )
    assert bundle.validate() == []


class TestBuildBundle:
    def test_pipeline_restricts_relations_and_reports(self):
        g = KnowledgeGraph(
            vertices={v: "" for v in "abcdz"},
            relations={"keepme": "", "skewed": "", "dropme": "", "empty": ""},
            triples=frozenset(
                {
                    ("a", "skewed", "c"),
                    ("b", "skewed", "c"),
                    ("a", "keepme", "b"),
                    ("b", "keepme", "a"),
                    ("d", "keepme", "a"),
                    ("a", "dropme", "d"),
                    ("d", "dropme", "a"),
                }
            ),
        )
        records = [
            IngestionRecord(v, f"{v}{i}", f"about {v}{i}", "w")
            for v in "abcdz"
            for i in range(4)
        ]
        config = make_config(
            concept_relation_count=1,
            total_relation_count=2,
            target_mention_split=0.5,
            mention_threshold=0,
        )
        bundle, report = build_bundle(g, records, config)
        # ratios: skewed 0.5 (2 heads, 1 tail), keepme 2/3, dropme 1.0
        assert report.concept_relations == ("skewed",)
        assert set(report.kept_relations) == {"skewed", "keepme"}
        assert report.relations_without_triples == ("empty",)
        assert set(bundle.closed.graph.relations) == {"skewed", "keepme"}
        # z has no triples under kept relations, so its records are skipped
        assert report.records_skipped_vertex == 4
        assert "z" not in bundle.closed.graph.vertices
        assert bundle.validate() == []

    def test_stats_report_hand_counts(self, tiny_bundle):
        report = stats_report(tiny_bundle)
        assert report == {
            "relations": 2,
            "closed-vertices": 3,
            "closed-triples": 3,
            "closed-mentions": 4,
            "closed-contexts": 6,
            "validation-mentions": 1,
            "validation-contexts": 2,
            "validation-task-triples": 1,
            "validation-ranking-queries": 1,
            "validation-linking-queries": 1,
            "test-mentions": 2,
            "test-contexts": 3,
            "test-task-triples": 3,
            "test-ranking-queries": 2,
            "test-linking-queries": 3,
        }

    def test_stats_report_empty_bundle(self):
        from kglink.core import ClosedWorld, DatasetBundle, empty_contexts, empty_mentions, empty_split

        empty = DatasetBundle(
            closed=ClosedWorld(
                graph=KnowledgeGraph(vertices={}, relations={}, triples=frozenset()),
                mentions=empty_mentions(),
                contexts=empty_contexts(),
            ),
            open_validation=empty_split(),
            open_test=empty_split(),
        )
        assert all(v == 0 for v in stats_report(empty).values())

    def test_config_validation(self):
        with pytest.raises(BuildError):
            make_config(concept_relation_count=3, total_relation_count=2)
        with pytest.raises(BuildError):
            make_config(target_mention_split=1.0)
        with pytest.raises(BuildError):
            make_config(target_validation_split=0.0)
        with pytest.raises(BuildError):
            make_config(mention_threshold=-1)
