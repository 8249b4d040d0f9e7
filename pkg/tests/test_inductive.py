"""Open-world trainers: loss oracles, gradient checks, freezing, sampling."""

import numpy as np
import pytest

from kglink.binio import FormatError
from kglink.complex_model import complex_score, init_embeddings
from kglink.core import (
    ClosedWorld,
    ContextRecord,
    ContextStore,
    DatasetBundle,
    KnowledgeGraph,
    MentionMap,
    empty_split,
)
from kglink.inductive import (
    InductiveTrainConfig,
    JointSample,
    OpenWorldModel,
    OweSample,
    _TrainingPool,
    joint_loss_and_grads,
    load_model,
    open_score,
    owe_loss_and_grads,
    rank_vertices,
    save_model,
    text_representation,
    train_joint,
    train_owe,
)
from kglink.text import (
    ExternalEncodings,
    Projection,
    TokenEncoder,
    Vocabulary,
    build_vocabulary,
    encode,
    init_encoder,
    init_projection,
    project,
    tokenize,
)


def finite_difference(loss_fn, param, eps=1e-4):
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + eps
        up = loss_fn()
        param[idx] = orig - eps
        down = loss_fn()
        param[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_joint_instance(seed, external=False):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    d_in = int(rng.integers(1, 5))
    n_vertices = int(rng.integers(2, 6))
    n_relations = int(rng.integers(1, 4))
    vocab_size = int(rng.integers(3, 8))
    entity = rng.normal(0, 0.5, size=(n_vertices, 2 * d))
    relation = rng.normal(0, 0.5, size=(n_relations, 2 * d))
    weight = rng.normal(0, 0.5, size=(d_in, 2 * d))
    bias = rng.normal(0, 0.5, size=2 * d)
    table = None if external else rng.normal(0, 0.5, size=(vocab_size, d_in))
    samples = []
    for _ in range(int(rng.integers(2, 5))):
        if external:
            token_lists, pooled = None, rng.normal(0, 0.5, size=d_in)
        else:
            token_lists = tuple(
                tuple(int(t) for t in rng.integers(0, vocab_size, size=rng.integers(1, 4)))
                for _ in range(int(rng.integers(1, 3)))
            )
            pooled = None
        samples.append(
            JointSample(
                token_lists=token_lists,
                pooled=pooled,
                relation_row=int(rng.integers(0, n_relations)),
                target_row=int(rng.integers(0, n_vertices)),
                direction="head" if rng.random() < 0.5 else "tail",
            )
        )
    reg = 0.0 if seed % 2 else 0.3
    return entity, relation, weight, bias, table, samples, reg


class TestJointLoss:
    def test_uniform_scores_loss_is_log_candidates(self):
        n_vertices, d, d_in = 5, 2, 3
        entity = np.zeros((n_vertices, 2 * d))
        relation = np.ones((1, 2 * d))
        weight = np.zeros((d_in, 2 * d))
        bias = np.zeros(2 * d)
        table = np.ones((4, d_in))
        samples = [
            JointSample(((0, 1),), None, 0, 2, "tail"),
            JointSample(((2,),), None, 0, 4, "head"),
        ]
        loss, _ = joint_loss_and_grads(entity, relation, weight, bias, table, samples)
        assert loss == pytest.approx(np.log(n_vertices))

    @pytest.mark.parametrize("seed", range(8))
    def test_gradients_match_finite_differences(self, seed):
        entity, relation, weight, bias, table, samples, reg = random_joint_instance(seed)
        _, grads = joint_loss_and_grads(entity, relation, weight, bias, table, samples, reg)

        def loss_fn():
            return joint_loss_and_grads(entity, relation, weight, bias, table, samples, reg)[0]

        for name, param in [
            ("entity", entity),
            ("relation", relation),
            ("W", weight),
            ("b", bias),
            ("table", table),
        ]:
            numeric = finite_difference(loss_fn, param)
            err = relative_error(grads[name], numeric)
            assert err <= 1e-3, f"{name} gradient off by {err} (seed {seed})"

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_with_precomputed_vectors(self, seed):
        entity, relation, weight, bias, table, samples, reg = random_joint_instance(
            seed, external=True
        )
        _, grads = joint_loss_and_grads(entity, relation, weight, bias, table, samples, reg)
        assert grads["table"] is None

        def loss_fn():
            return joint_loss_and_grads(entity, relation, weight, bias, table, samples, reg)[0]

        for name, param in [("entity", entity), ("relation", relation), ("W", weight), ("b", bias)]:
            assert relative_error(grads[name], finite_difference(loss_fn, param)) <= 1e-3

    def test_frozen_encoder_returns_no_table_gradient(self):
        entity, relation, weight, bias, table, samples, reg = random_joint_instance(1)
        _, grads = joint_loss_and_grads(
            entity, relation, weight, bias, table, samples, reg, unfrozen_encoder=False
        )
        assert grads["table"] is None

    def test_regularizer_only_touches_used_rows(self):
        entity, relation, weight, bias, table, samples, _ = random_joint_instance(4)
        _, plain = joint_loss_and_grads(entity, relation, weight, bias, table, samples, 0.0)
        _, penalized = joint_loss_and_grads(entity, relation, weight, bias, table, samples, 0.5)
        target_rows = {s.target_row for s in samples}
        rel_rows = {s.relation_row for s in samples}
        diff_entity = penalized["entity"] - plain["entity"]
        diff_relation = penalized["relation"] - plain["relation"]
        for row in range(entity.shape[0]):
            if row not in target_rows:
                assert np.allclose(diff_entity[row], 0.0)
        for row in range(relation.shape[0]):
            if row not in rel_rows:
                assert np.allclose(diff_relation[row], 0.0)


def random_owe_instance(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    d_in = int(rng.integers(1, 5))
    n_vertices = int(rng.integers(2, 6))
    vocab_size = int(rng.integers(3, 8))
    entity = rng.normal(0, 0.5, size=(n_vertices, 2 * d))
    weight = rng.normal(0, 0.5, size=(d_in, 2 * d))
    bias = rng.normal(0, 0.5, size=2 * d)
    table = rng.normal(0, 0.5, size=(vocab_size, d_in))
    samples = [
        OweSample(
            token_lists=tuple(
                tuple(int(t) for t in rng.integers(0, vocab_size, size=rng.integers(1, 4)))
                for _ in range(int(rng.integers(1, 3)))
            ),
            pooled=None,
            vertex_row=int(rng.integers(0, n_vertices)),
        )
        for _ in range(int(rng.integers(2, 5)))
    ]
    return entity, weight, bias, table, samples, d


class TestOweLoss:
    def test_hand_value_unit_distance(self):
        # d=1, projected text 1+1i, frozen target 0: loss (1+1)/2 = 1
        entity = np.zeros((1, 2))
        weight = np.zeros((2, 2))
        bias = np.array([1.0, 1.0])
        table = np.zeros((3, 2))
        samples = [OweSample(((0,),), None, 0)]
        loss, grads = owe_loss_and_grads(entity, weight, bias, table, samples, dim=1)
        assert loss == pytest.approx(1.0)
        assert grads["b"] == pytest.approx(np.array([1.0, 1.0]))

    @pytest.mark.parametrize("seed", range(8))
    def test_gradients_match_finite_differences(self, seed):
        entity, weight, bias, table, samples, d = random_owe_instance(seed)
        _, grads = owe_loss_and_grads(entity, weight, bias, table, samples, d)

        def loss_fn():
            return owe_loss_and_grads(entity, weight, bias, table, samples, d)[0]

        for name, param in [("W", weight), ("b", bias), ("table", table)]:
            numeric = finite_difference(loss_fn, param)
            err = relative_error(grads[name], numeric)
            assert err <= 1e-3, f"{name} gradient off by {err} (seed {seed})"

    def test_no_gradient_for_graph_embeddings(self):
        entity, weight, bias, table, samples, d = random_owe_instance(3)
        _, grads = owe_loss_and_grads(entity, weight, bias, table, samples, d)
        assert "entity" not in grads and "relation" not in grads


def small_model(seed=0, dim=2, encoder_dim=3):
    sentences = ["red rock canyon", "blue ice field", "old river delta"]
    vocab = build_vocabulary(sentences)
    encoder = init_encoder(vocab, encoder_dim, seed)
    projection = init_projection(encoder_dim, dim, seed)
    graph = init_embeddings(("a", "b", "c"), ("r1", "r2"), dim, seed)
    return OpenWorldModel(encoder=encoder, projection=projection, graph=graph, mode="multi")


class TestOpenScore:
    def test_tail_matches_manual_pipeline(self):
        model = small_model()
        ctx = ("c::0", "red rock canyon")
        toks = tokenize(model.encoder.vocab, ctx[1])
        c = project(model.projection, encode(model.encoder, toks))
        rel = model.graph.relation[model.graph.relation_row("r1")]
        v = model.graph.entity[model.graph.vertex_row("b")]
        assert open_score(model, [ctx], "r1", "b", "tail") == pytest.approx(
            complex_score(c, rel, v)
        )

    def test_head_places_text_in_tail_slot(self):
        model = small_model()
        ctx = ("c::0", "blue ice field")
        c = text_representation(model, [ctx])
        rel = model.graph.relation[model.graph.relation_row("r2")]
        v = model.graph.entity[model.graph.vertex_row("a")]
        assert open_score(model, [ctx], "r2", "a", "head") == pytest.approx(
            complex_score(v, rel, c)
        )

    def test_rank_vertices_matches_open_score(self):
        model = small_model(seed=5)
        ctxs = [("x::0", "old river delta"), ("x::1", "blue ice field")]
        for direction in ("head", "tail"):
            ranking = rank_vertices(model, ctxs, "r1", direction)
            for vertex, score in ranking:
                assert score == pytest.approx(
                    open_score(model, ctxs, "r1", vertex, direction), abs=1e-9
                )
            scores = [s for _, s in ranking]
            assert scores == sorted(scores, reverse=True)

    def test_tied_scores_order_by_vertex_id(self):
        model = small_model()
        entity = model.graph.entity.copy()
        entity[1] = entity[0]  # vertices a and b share an embedding
        graph = init_embeddings(("a", "b", "c"), ("r1", "r2"), model.graph.dim, 0)
        object.__setattr__(graph, "entity", entity)
        tied = OpenWorldModel(model.encoder, model.projection, graph, "multi")
        ranking = rank_vertices(tied, [("q::0", "red rock")], "r1", "tail")
        pos_a = [v for v, _ in ranking].index("a")
        assert ranking[pos_a + 1][0] == "b"

    @pytest.mark.parametrize("k", [1, 2, 8])
    def test_duplicated_contexts_collapse_to_single(self, k):
        model = small_model(seed=2)
        ctx = ("c::0", "red rock canyon")
        single = text_representation(model, [ctx])
        repeated = text_representation(model, [ctx] * k)
        np.testing.assert_allclose(repeated, single, atol=1e-9)

    def test_empty_contexts_rejected(self):
        with pytest.raises(ValueError, match="at least one context"):
            text_representation(small_model(), [])

    def test_unknown_direction_rejected(self):
        model = small_model()
        with pytest.raises(ValueError, match="direction"):
            open_score(model, [("c::0", "red rock")], "r1", "a", "sideways")


def joint_config(**overrides):
    base = dict(
        dim=4,
        mode="multi",
        contexts_per_sample=2,
        max_contexts=5,
        learning_rate=0.01,
        batch_size=4,
        max_epochs=10,
        seed=0,
        encoder_dim=8,
    )
    base.update(overrides)
    return InductiveTrainConfig(**base)


class TestTrainingPool:
    def test_max_contexts_caps_each_mention(self, tiny_bundle):
        vocab = build_vocabulary(r.sentence for r in tiny_bundle.closed.contexts.records)
        pool = _TrainingPool(tiny_bundle, joint_config(max_contexts=1), vocab)
        pool.start_epoch(np.random.default_rng(0))
        # vertex a has mentions m-a1 (2 contexts) and m-a2 (1): capped to 1 each
        assert pool.pool_size("a") == 2
        assert pool.pool_size("c") == 1

    def test_draws_cover_pool_without_repeats(self, tiny_bundle):
        vocab = build_vocabulary(r.sentence for r in tiny_bundle.closed.contexts.records)
        pool = _TrainingPool(tiny_bundle, joint_config(max_contexts=5), vocab)
        rng = np.random.default_rng(1)
        pool.start_epoch(rng)
        assert pool.pool_size("a") == 3
        seen = [ctx[0] for ctx, _ in pool.draw("a", 2, rng) + pool.draw("a", 1, rng)]
        assert len(set(seen)) == 3

    def test_masked_pools_hide_the_surface(self, tiny_bundle):
        vocab = build_vocabulary(r.sentence for r in tiny_bundle.closed.contexts.records)
        pool = _TrainingPool(tiny_bundle, joint_config(masked=True, max_contexts=5), vocab)
        for ctxs, toks in pool.by_vertex["c"]:
            for seq in toks:
                assert vocab.mask_id in seq
        unmasked = _TrainingPool(tiny_bundle, joint_config(max_contexts=5), vocab)
        for ctxs, toks in unmasked.by_vertex["c"]:
            for seq in toks:
                assert vocab.mask_id not in seq


def skip_bundle():
    """One closed vertex has a mention but no contexts at all."""
    graph = KnowledgeGraph(
        vertices={"a": "Alpha", "b": "Beta"},
        relations={"r": "rel"},
        triples=frozenset({("a", "r", "b")}),
    )
    mentions = MentionMap(
        vertex_of={"ma": "a", "mb": "b"}, surface_of={"ma": "alpha", "mb": "beta"}
    )
    contexts = ContextStore(records=(ContextRecord("ma", "alpha rests near the ridge", "w"),))
    closed = ClosedWorld(graph=graph, mentions=mentions, contexts=contexts)
    bundle = DatasetBundle(
        closed=closed, open_validation=empty_split(), open_test=empty_split()
    )
    bundle.check()
    return bundle


class TestTrainJoint:
    def test_loss_decreases_by_epoch_ten(self, tiny_bundle):
        log = {}
        train_joint(tiny_bundle, joint_config(), log=log)
        assert log["epochs"] == 10
        assert log["epoch_losses"][-1] < log["epoch_losses"][0]

    def test_same_seed_same_model(self, tiny_bundle):
        config = joint_config(max_epochs=3)
        first = train_joint(tiny_bundle, config)
        second = train_joint(tiny_bundle, config)
        assert np.array_equal(first.projection.weight, second.projection.weight)
        assert np.array_equal(first.graph.entity, second.graph.entity)
        assert np.array_equal(first.encoder.table, second.encoder.table)

    def test_different_seed_differs(self, tiny_bundle):
        first = train_joint(tiny_bundle, joint_config(max_epochs=3, seed=0))
        second = train_joint(tiny_bundle, joint_config(max_epochs=3, seed=1))
        assert not np.array_equal(first.projection.weight, second.projection.weight)

    def test_anchor_without_contexts_is_skipped_and_counted(self):
        bundle = skip_bundle()
        log = {}
        model = train_joint(bundle, joint_config(max_epochs=2, batch_size=1), log=log)
        # head prediction anchored at b has no contexts: one skip per epoch
        assert log["skipped_no_contexts"] == 2
        assert model.graph.vertex_ids == ("a", "b")

    def test_early_stop_when_monitor_saturates(self, tiny_bundle):
        # 3 candidates, so validation hits@10 is 1.0 from the first epoch on
        log = {}
        train_joint(tiny_bundle, joint_config(max_epochs=30, patience=2), log=log)
        assert log["stopped_early"]
        assert log["epochs"] == 3
        assert log["monitor"][0] == 1.0

    def test_external_vectors_train_projection_only_path(self, tiny_bundle):
        rng = np.random.default_rng(0)
        ids = [cid for cid, _ in tiny_bundle.closed.contexts.with_ids()]
        external = ExternalEncodings(
            vectors={cid: rng.normal(size=6) for cid in ids}, dim=6
        )
        log = {}
        model = train_joint(tiny_bundle, joint_config(), external=external, log=log)
        assert model.encoder is external
        assert log["epoch_losses"][-1] < log["epoch_losses"][0]
        score = open_score(model, [(ids[0], "")], "r1", "b", "tail")
        assert np.isfinite(score)

    def test_mode_constraint_enforced(self):
        with pytest.raises(ValueError, match="single mode"):
            joint_config(mode="single", contexts_per_sample=2)

    def test_no_triples_rejected(self, tiny_bundle):
        closed = ClosedWorld(
            graph=KnowledgeGraph(
                vertices=tiny_bundle.closed.graph.vertices,
                relations=tiny_bundle.closed.graph.relations,
                triples=frozenset(),
            ),
            mentions=tiny_bundle.closed.mentions,
            contexts=tiny_bundle.closed.contexts,
        )
        empty = DatasetBundle(
            closed=closed, open_validation=empty_split(), open_test=empty_split()
        )
        with pytest.raises(ValueError, match="no triples"):
            train_joint(empty, joint_config())


class TestTrainOwe:
    def pretrained_for(self, bundle, dim=4, seed=7):
        return init_embeddings(
            bundle.closed_vertices(), tuple(sorted(bundle.closed.graph.relations)), dim, seed
        )

    def test_graph_embeddings_stay_bit_identical(self, tiny_bundle):
        pretrained = self.pretrained_for(tiny_bundle)
        entity_before = pretrained.entity.copy()
        relation_before = pretrained.relation.copy()
        model = train_owe(tiny_bundle, pretrained, joint_config())
        assert np.array_equal(model.graph.entity, entity_before)
        assert np.array_equal(model.graph.relation, relation_before)

    def test_loss_decreases_by_epoch_ten(self, tiny_bundle):
        log = {}
        train_owe(tiny_bundle, self.pretrained_for(tiny_bundle), joint_config(), log=log)
        assert log["epoch_losses"][-1] < log["epoch_losses"][0]

    def test_projection_actually_moves(self, tiny_bundle):
        pretrained = self.pretrained_for(tiny_bundle)
        config = joint_config(max_epochs=2)
        model = train_owe(tiny_bundle, pretrained, config)
        fresh = init_projection(config.encoder_dim, config.dim, config.seed)
        assert not np.array_equal(model.projection.weight, fresh.weight)

    def test_pretrained_must_match_closed_vertices(self, tiny_bundle):
        wrong = init_embeddings(("x", "y"), ("r1",), 4, 0)
        with pytest.raises(ValueError, match="closed-world vertices"):
            train_owe(tiny_bundle, wrong, joint_config())

    def test_deterministic(self, tiny_bundle):
        pretrained = self.pretrained_for(tiny_bundle)
        config = joint_config(max_epochs=3)
        first = train_owe(tiny_bundle, pretrained, config)
        second = train_owe(tiny_bundle, pretrained, config)
        assert np.array_equal(first.projection.weight, second.projection.weight)
        assert np.array_equal(first.encoder.table, second.encoder.table)


class TestModelRoundTrip:
    def test_token_model_round_trip(self, tmp_path):
        model = small_model(seed=3)
        path = tmp_path / "model.bin"
        save_model(model, path, seed=99)
        loaded, meta = load_model(path)
        assert meta["seed"] == 99
        assert loaded.mode == "multi"
        assert (tmp_path / "model.bin.vocab").exists()
        assert loaded.encoder.vocab.index == model.encoder.vocab.index
        np.testing.assert_allclose(loaded.encoder.table, model.encoder.table, atol=1e-6)
        np.testing.assert_allclose(loaded.projection.weight, model.projection.weight, atol=1e-6)
        np.testing.assert_allclose(loaded.projection.bias, model.projection.bias, atol=1e-6)
        np.testing.assert_allclose(loaded.graph.entity, model.graph.entity, atol=1e-6)
        assert loaded.graph.vertex_ids == model.graph.vertex_ids
        assert loaded.graph.relation_ids == model.graph.relation_ids

    def test_external_model_round_trip(self, tmp_path):
        external = ExternalEncodings(
            vectors={"c::0": np.array([1.5, -2.25]), "c::1": np.array([0.0, 3.125])}, dim=2
        )
        projection = init_projection(2, 3, 0)
        graph = init_embeddings(("a",), ("r",), 3, 0)
        model = OpenWorldModel(external, projection, graph, "single")
        path = tmp_path / "model.bin"
        save_model(model, path, seed=5)
        loaded, _ = load_model(path)
        assert loaded.mode == "single"
        assert isinstance(loaded.encoder, ExternalEncodings)
        assert set(loaded.encoder.vectors) == {"c::0", "c::1"}
        np.testing.assert_array_equal(loaded.encoder.vectors["c::0"], np.array([1.5, -2.25]))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOTMODEL" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_model(path)

    def test_bad_config_hash_length(self, tmp_path):
        with pytest.raises(ValueError, match="32 bytes"):
            save_model(small_model(), tmp_path / "m.bin", seed=0, config_hash=b"short")
