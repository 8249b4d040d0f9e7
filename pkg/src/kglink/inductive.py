"""Open-world model: text-based entity representations scored against the
closed graph, with two training strategies.

JOINT trains encoder, projection, and graph embeddings end to end: each
step samples a closed triple and a direction, represents the anchor vertex
by sampled text contexts, and applies softmax cross-entropy over all
candidate vertices for the open slot.

OWE takes pretrained graph embeddings, freezes them, and trains encoder
and projection to move each vertex's projected text representation close
to its graph embedding under mean squared error (averaged over the 2d
real coordinates).

Both accept either the learnable token encoder or precomputed external
context vectors (in which case only downstream parameters train).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import binio
from .complex_model import (
    ComplexEmbeddings,
    DivergenceError,
    complex_score,
    conj,
    init_embeddings,
    score_candidates,
    _hadamard,
    _hadamard_grads,
)
from .core import HEAD, TAIL, DatasetBundle, RelationId, VertexId
from .optim import Adam
from .text import (
    ExternalEncodings,
    Projection,
    TokenEncoder,
    Vocabulary,
    build_vocabulary,
    encode,
    init_encoder,
    init_projection,
    load_vocabulary,
    project,
    save_vocabulary,
    tokenize,
)

MODEL_MAGIC = b"KGLINKI\x00"
MODEL_VERSION = 1

Context = tuple[str, str]  # (context id, sentence)


@dataclass(frozen=True)
class InductiveTrainConfig:
    """Shared knobs for both open-world trainers.

    ``contexts_per_sample`` is the fused context-set size per training
    step (1 in single mode); ``max_contexts`` caps how many contexts one
    mention contributes per epoch. ``masked`` hides the mention surface
    tokens inside its own training contexts. ``unfrozen_encoder`` lets
    JOINT update the token table (projection always trains).
    ``subbatch_size`` is accepted for config compatibility and ignored.
    """

    dim: int
    mode: str
    contexts_per_sample: int = 1
    max_contexts: int = 1
    masked: bool = False
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    regularizer_weight: float = 0.0
    batch_size: int = 16
    subbatch_size: int | None = None
    max_epochs: int = 1
    patience: int | None = None
    min_delta: float = 0.001
    seed: int = 0
    encoder_dim: int = 256
    unfrozen_encoder: bool = True

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise ValueError(f"mode must be single or multi, got {self.mode!r}")
        if self.contexts_per_sample < 1:
            raise ValueError("contexts_per_sample must be >= 1")
        if self.mode == "single" and self.contexts_per_sample != 1:
            raise ValueError("single mode trains on exactly one context per sample")
        if self.max_contexts < 1:
            raise ValueError("max_contexts must be >= 1")
        if min(self.dim, self.encoder_dim, self.batch_size) < 1 or self.max_epochs < 0:
            raise ValueError("dim, encoder_dim and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0 or self.regularizer_weight < 0:
            raise ValueError("weight_decay and regularizer_weight must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")


@dataclass(frozen=True)
class OpenWorldModel:
    encoder: TokenEncoder | ExternalEncodings
    projection: Projection
    graph: ComplexEmbeddings
    mode: str

    def __post_init__(self):
        d_in = self.encoder.dim
        if self.projection.input_dim != d_in:
            raise ValueError(
                f"projection expects d'={self.projection.input_dim}, encoder provides {d_in}"
            )
        if self.projection.graph_dim != self.graph.dim:
            raise ValueError(
                f"projection produces dim {self.projection.graph_dim}, graph has {self.graph.dim}"
            )


def context_vector(
    encoder: TokenEncoder | ExternalEncodings, ctx: Context, mask_surface: str | None = None
) -> np.ndarray:
    """Encode one (context id, sentence) pair into R^{d'}."""
    cid, sentence = ctx
    if isinstance(encoder, ExternalEncodings):
        try:
            return encoder.vectors[cid]
        except KeyError:
            raise KeyError(f"no external encoding for context {cid!r}") from None
    return encode(encoder, tokenize(encoder.vocab, sentence, mask_surface))


def text_representation(
    model: OpenWorldModel, contexts: Sequence[Context], mask_surface: str | None = None
) -> np.ndarray:
    """Average the context encodings, then project into the graph space."""
    if len(contexts) == 0:
        raise ValueError("at least one context is required")
    pooled = np.mean([context_vector(model.encoder, c, mask_surface) for c in contexts], axis=0)
    return project(model.projection, pooled)


def open_score(
    model: OpenWorldModel,
    contexts: Sequence[Context],
    relation: RelationId,
    vertex: VertexId,
    direction: str,
) -> float:
    """Score the candidate vertex in the slot named by ``direction``.

    tail: psi(text, r, vertex); head: psi(vertex, r, text).
    """
    c = text_representation(model, contexts)
    rel = model.graph.relation[model.graph.relation_row(relation)]
    v = model.graph.entity[model.graph.vertex_row(vertex)]
    if direction == TAIL:
        return complex_score(c, rel, v)
    if direction == HEAD:
        return complex_score(v, rel, c)
    raise ValueError(f"direction must be head or tail, got {direction!r}")


def rank_vertices(
    model: OpenWorldModel,
    contexts: Sequence[Context],
    relation: RelationId,
    direction: str,
) -> list[tuple[VertexId, float]]:
    """All candidate vertices by open_score, descending, ties by id."""
    c = text_representation(model, contexts)
    rel = model.graph.relation[model.graph.relation_row(relation)]
    if direction == HEAD:
        rel = conj(rel)
    elif direction != TAIL:
        raise ValueError(f"direction must be head or tail, got {direction!r}")
    scores = score_candidates(c, rel, model.graph.entity)
    order = sorted(zip(model.graph.vertex_ids, scores), key=lambda p: (-p[1], p[0]))
    return [(v, float(s)) for v, s in order]


def _mention_contexts(split) -> dict[str, list[Context]]:
    """mention id -> [(context id, sentence)] in canonical order."""
    out: dict[str, list[Context]] = {}
    for cid, rec in split.contexts.with_ids():
        out.setdefault(rec.mention, []).append((cid, rec.sentence))
    return out


class _TrainingPool:
    """Per-vertex context pools for training, resampled every epoch.

    Contexts are pre-encoded to R^{d'} once (token sequences stay around
    only for the learnable encoder's gradient). Each epoch draws at most
    ``max_contexts`` contexts per mention, shuffles the vertex pool, and
    hands out chunks without replacement, rewinding with a reshuffle when
    exhausted.
    """

    def __init__(self, bundle: DatasetBundle, config: InductiveTrainConfig, vocab: Vocabulary | None):
        closed = bundle.closed
        self.vertices = bundle.closed_vertices()
        self.by_vertex: dict[VertexId, list[tuple[list[Context], list[list[int]]]]] = {}
        for mention, ctxs in sorted(_mention_contexts(closed).items()):
            vertex = closed.mentions.vertex_of[mention]
            surface = closed.mentions.surface_of[mention] if config.masked else None
            toks = [tokenize(vocab, s, surface) if vocab else None for _, s in ctxs]
            self.by_vertex.setdefault(vertex, []).append((ctxs, toks))
        self.max_contexts = config.max_contexts
        self._pools: dict[VertexId, list] = {}
        self._cursor: dict[VertexId, int] = {}

    def start_epoch(self, rng: np.random.Generator) -> None:
        self._pools = {}
        self._cursor = {}
        for vertex, mention_lists in sorted(self.by_vertex.items()):
            pool = []
            for ctxs, toks in mention_lists:
                take = min(len(ctxs), self.max_contexts)
                picked = rng.choice(len(ctxs), size=take, replace=False)
                pool.extend((ctxs[i], toks[i]) for i in picked)
            rng.shuffle(pool)
            self._pools[vertex] = pool
            self._cursor[vertex] = 0

    def pool_size(self, vertex: VertexId) -> int:
        return len(self._pools.get(vertex, []))

    def draw(self, vertex: VertexId, k: int, rng: np.random.Generator):
        pool = self._pools.get(vertex, [])
        if not pool:
            return []
        k = min(k, len(pool))
        if self._cursor[vertex] + k > len(pool):
            rng.shuffle(pool)
            self._cursor[vertex] = 0
        start = self._cursor[vertex]
        self._cursor[vertex] = start + k
        return pool[start : start + k]


def _encoder_input_dim(encoder: TokenEncoder | ExternalEncodings) -> int:
    return encoder.dim


class JointSample(NamedTuple):
    """One training step input: the anchor's sampled contexts and the
    classification target. ``token_lists`` drives the learnable encoder;
    ``pooled`` carries a precomputed vector instead (external encodings)."""

    token_lists: tuple[tuple[int, ...], ...] | None
    pooled: np.ndarray | None
    relation_row: int
    target_row: int
    direction: str


class OweSample(NamedTuple):
    token_lists: tuple[tuple[int, ...], ...] | None
    pooled: np.ndarray | None
    vertex_row: int


def _pool_from_table(table: np.ndarray, token_lists) -> np.ndarray:
    """Mean over contexts of the mean token row; empty contexts are zero."""
    d_in = table.shape[1]
    vecs = [
        table[list(toks)].mean(axis=0) if len(toks) else np.zeros(d_in) for toks in token_lists
    ]
    return np.mean(vecs, axis=0)


def _sample_inputs(samples, table: np.ndarray | None) -> np.ndarray:
    rows = []
    for s in samples:
        if s.pooled is not None:
            rows.append(s.pooled)
        else:
            rows.append(_pool_from_table(table, s.token_lists))
    return np.array(rows)


def _backprop_text(dx_rows, samples, d_table) -> None:
    """Distribute d(pooled vector) into the token table (mean of means)."""
    for dx, sample in zip(dx_rows, samples):
        if sample.token_lists is None:
            continue
        k = len(sample.token_lists)
        for toks in sample.token_lists:
            if len(toks) == 0:
                continue
            np.add.at(d_table, list(toks), dx / (k * len(toks)))


def joint_loss_and_grads(
    entity: np.ndarray,
    relation: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    table: np.ndarray | None,
    samples: Sequence[JointSample],
    regularizer_weight: float = 0.0,
    unfrozen_encoder: bool = True,
) -> tuple[float, dict[str, np.ndarray | None]]:
    """Batch loss for end-to-end training, plus analytic gradients.

    Mean over samples of softmax cross-entropy over all candidate rows,
    scoring psi(text, r, cand) for tail prediction and psi(cand, r, text)
    for head prediction, plus an L2 penalty averaged over the touched
    target-entity and relation rows.
    """
    n = len(samples)
    X = _sample_inputs(samples, table)
    rel_rows = np.array([s.relation_row for s in samples])
    target_rows = np.array([s.target_row for s in samples])
    head_mask = np.array([s.direction == HEAD for s in samples])

    C = X @ weight + bias
    rel_eff = relation[rel_rows].copy()
    rel_eff[head_mask] = conj(rel_eff[head_mask])
    Q = _hadamard(C, rel_eff)
    scores = Q @ entity.T
    # cross-entropy via log-sum-exp, stable for extreme scores
    top = scores.max(axis=1)
    lse = np.log(np.exp(scores - top[:, None]).sum(axis=1)) + top
    loss = float((lse - scores[np.arange(n), target_rows]).sum() / n)

    probs = np.exp(scores - lse[:, None])
    d_scores = probs
    d_scores[np.arange(n), target_rows] -= 1.0
    d_scores /= n
    dQ = d_scores @ entity
    d_entity = d_scores.T @ Q
    dC, d_rel_eff = _hadamard_grads(dQ, C, rel_eff)
    d_rel_eff[head_mask] = conj(d_rel_eff[head_mask])
    d_relation = np.zeros_like(relation)
    np.add.at(d_relation, rel_rows, d_rel_eff)

    if regularizer_weight:
        ent_rows = np.unique(target_rows)
        rel_urows = np.unique(rel_rows)
        n_rows = len(ent_rows) + len(rel_urows)
        loss += (
            regularizer_weight
            * ((entity[ent_rows] ** 2).sum() + (relation[rel_urows] ** 2).sum())
            / n_rows
        )
        d_entity[ent_rows] += 2.0 * regularizer_weight / n_rows * entity[ent_rows]
        d_relation[rel_urows] += 2.0 * regularizer_weight / n_rows * relation[rel_urows]

    grads: dict[str, np.ndarray | None] = {
        "entity": d_entity,
        "relation": d_relation,
        "W": X.T @ dC,
        "b": dC.sum(axis=0),
        "table": None,
    }
    if table is not None and unfrozen_encoder:
        d_table = np.zeros_like(table)
        _backprop_text(dC @ weight.T, samples, d_table)
        grads["table"] = d_table
    return loss, grads


def owe_loss_and_grads(
    entity: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    table: np.ndarray | None,
    samples: Sequence[OweSample],
    dim: int,
    unfrozen_encoder: bool = True,
) -> tuple[float, dict[str, np.ndarray | None]]:
    """Batch loss for alignment training, plus analytic gradients.

    Mean over samples of squared distance between the projected text
    vector and the frozen vertex embedding, averaged over the 2d real
    coordinates; gradients flow only into projection and encoder.
    """
    n = len(samples)
    X = _sample_inputs(samples, table)
    V = entity[np.array([s.vertex_row for s in samples])]
    C = X @ weight + bias
    diff = C - V
    loss = float((diff**2).sum() / (2 * dim) / n)
    dC = diff / dim / n
    grads: dict[str, np.ndarray | None] = {"W": X.T @ dC, "b": dC.sum(axis=0), "table": None}
    if table is not None and unfrozen_encoder:
        d_table = np.zeros_like(table)
        _backprop_text(dC @ weight.T, samples, d_table)
        grads["table"] = d_table
    return loss, grads


def _validation_hits10(model: OpenWorldModel, bundle: DatasetBundle) -> float:
    """Raw linking hits@10 on the validation split; the early-stop monitor."""
    split = bundle.open_validation
    contexts_of = _mention_contexts(split)
    tasks = sorted(split.task_triples, key=lambda t: (t.mention, t.relation, t.vertex, t.direction))
    hits = 0
    total = 0
    for task in tasks:
        ctxs = contexts_of.get(task.mention, [])[:100]
        if not ctxs:
            continue
        ranking = rank_vertices(model, ctxs, task.relation, task.direction)
        rank = next(i for i, (v, _) in enumerate(ranking, start=1) if v == task.vertex)
        hits += rank <= 10
        total += 1
    return hits / total if total else 0.0


def _run_training(
    bundle: DatasetBundle,
    config: InductiveTrainConfig,
    model: OpenWorldModel,
    make_batches,
    batch_grads,
    optimizers,
    log: dict,
) -> OpenWorldModel:
    """Shared epoch loop: batching, divergence guard, early stop on the
    validation linking monitor, best-snapshot return."""
    rng = np.random.default_rng([config.seed, 5])
    best = _snapshot(model)
    best_score = -np.inf
    waited = 0
    log.setdefault("skipped_no_contexts", 0)
    log.update(epochs=0, epoch_losses=[], monitor=[], stopped_early=False)

    for epoch in range(config.max_epochs):
        losses = []
        for batch in make_batches(rng):
            with np.errstate(all="ignore"):
                loss = batch_grads(batch)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}; reduce the learning rate"
                )
            losses.append(loss)
            for opt, name, param, grad in optimizers():
                if grad is not None:
                    opt.step(name, param, grad)
        log["epochs"] = epoch + 1
        log["epoch_losses"].append(float(np.mean(losses)) if losses else 0.0)

        if config.patience is not None:
            score = _validation_hits10(model, bundle)
            log["monitor"].append(score)
            if score > best_score + config.min_delta:
                best_score = score
                best = _snapshot(model)
                waited = 0
            else:
                waited += 1
                if waited >= config.patience:
                    log["stopped_early"] = True
                    return best
    return best if config.patience is not None else model


def _snapshot(model: OpenWorldModel) -> OpenWorldModel:
    encoder = model.encoder
    if isinstance(encoder, TokenEncoder):
        encoder = TokenEncoder(table=encoder.table.copy(), vocab=encoder.vocab)
    return OpenWorldModel(
        encoder=encoder,
        projection=Projection(weight=model.projection.weight.copy(), bias=model.projection.bias.copy()),
        graph=model.graph.copy(),
        mode=model.mode,
    )


def _init_model(
    bundle: DatasetBundle,
    config: InductiveTrainConfig,
    external: ExternalEncodings | None,
    graph: ComplexEmbeddings,
) -> tuple[OpenWorldModel, Vocabulary | None]:
    if external is not None:
        encoder: TokenEncoder | ExternalEncodings = external
        vocab = None
    else:
        sentences = [r.sentence for r in bundle.closed.contexts.records]
        vocab = build_vocabulary(sentences)
        encoder = init_encoder(vocab, config.encoder_dim, config.seed)
    projection = init_projection(_encoder_input_dim(encoder), graph.dim, config.seed)
    model = OpenWorldModel(encoder=encoder, projection=projection, graph=graph, mode=config.mode)
    return model, vocab


def train_joint(
    bundle: DatasetBundle,
    config: InductiveTrainConfig,
    external: ExternalEncodings | None = None,
    log: dict | None = None,
) -> OpenWorldModel:
    """End-to-end training over closed triples with text-side anchors.

    Each epoch visits every (triple, direction) pair once in shuffled
    order; the anchor vertex (head for tail prediction, tail for head
    prediction) is represented by sampled contexts and the open slot is
    classified over all closed vertices with softmax cross-entropy.
    Anchors without any closed context are skipped and counted.
    """
    if log is None:
        log = {}
    if not bundle.closed.graph.triples:
        raise ValueError("closed world has no triples to train on")
    vertex_ids = bundle.closed_vertices()
    relation_ids = tuple(sorted(bundle.closed.graph.relations))
    graph = init_embeddings(vertex_ids, relation_ids, config.dim, config.seed)
    model, vocab = _init_model(bundle, config, external, graph)
    pool = _TrainingPool(bundle, config, vocab)

    triples = sorted(bundle.closed.graph.triples)
    directed = [(t, TAIL) for t in triples] + [(t, HEAD) for t in triples]
    entity = graph.entity
    relation = graph.relation
    W, b = model.projection.weight, model.projection.bias
    table = model.encoder.table if isinstance(model.encoder, TokenEncoder) else None

    opt_graph = Adam(config.learning_rate)
    opt_text = Adam(config.learning_rate, weight_decay=config.weight_decay)
    grads: dict[str, np.ndarray | None] = {}

    def make_batches(rng):
        pool.start_epoch(rng)
        order = rng.permutation(len(directed))
        batch = []
        for i in order:
            (h, r, t), direction = directed[i]
            anchor, target = (h, t) if direction == TAIL else (t, h)
            drawn = pool.draw(anchor, config.contexts_per_sample, rng)
            if not drawn:
                log["skipped_no_contexts"] += 1
                continue
            batch.append(
                JointSample(
                    token_lists=_drawn_tokens(drawn),
                    pooled=_drawn_pooled(model.encoder, drawn),
                    relation_row=graph.relation_row(r),
                    target_row=graph.vertex_row(target),
                    direction=direction,
                )
            )
            if len(batch) == config.batch_size:
                yield batch
                batch = []
        if batch:
            yield batch

    def batch_grads(batch):
        loss, batch_grads_ = joint_loss_and_grads(
            entity, relation, W, b, table, batch,
            regularizer_weight=config.regularizer_weight,
            unfrozen_encoder=config.unfrozen_encoder,
        )
        grads.update(batch_grads_)
        return loss

    def optimizers():
        yield opt_graph, "entity", entity, grads.get("entity")
        yield opt_graph, "relation", relation, grads.get("relation")
        yield opt_text, "W", W, grads.get("W")
        yield opt_text, "b", b, grads.get("b")
        if table is not None:
            yield opt_text, "table", table, grads.get("table")

    return _run_training(bundle, config, model, make_batches, batch_grads, optimizers, log)


def _drawn_tokens(drawn) -> tuple[tuple[int, ...], ...] | None:
    if drawn and drawn[0][1] is None:
        return None
    return tuple(tuple(toks) for _, toks in drawn)


def _drawn_pooled(encoder, drawn) -> np.ndarray | None:
    if not isinstance(encoder, ExternalEncodings):
        return None
    return np.mean([encoder.vectors[ctx[0]] for ctx, _ in drawn], axis=0)


def train_owe(
    bundle: DatasetBundle,
    pretrained: ComplexEmbeddings,
    config: InductiveTrainConfig,
    external: ExternalEncodings | None = None,
    log: dict | None = None,
) -> OpenWorldModel:
    """Alignment training against frozen pretrained graph embeddings.

    Per sample, a chunk of one closed vertex's contexts is projected and
    pulled toward that vertex's graph embedding under MSE over the 2d real
    coordinates; only encoder and projection receive updates.
    """
    if log is None:
        log = {}
    expected = bundle.closed_vertices()
    if pretrained.vertex_ids != expected:
        raise ValueError(
            "pretrained embeddings are not bound to this bundle's closed-world vertices"
        )
    model, vocab = _init_model(bundle, config, external, pretrained)
    pool = _TrainingPool(bundle, config, vocab)
    entity = pretrained.entity
    W, b = model.projection.weight, model.projection.bias
    table = model.encoder.table if isinstance(model.encoder, TokenEncoder) else None

    opt_text = Adam(config.learning_rate, weight_decay=config.weight_decay)
    grads: dict[str, np.ndarray | None] = {}
    d = pretrained.dim

    def make_batches(rng):
        pool.start_epoch(rng)
        anchors = []
        for vertex in pool.vertices:
            size = pool.pool_size(vertex)
            if size == 0:
                log["skipped_no_contexts"] += 1
                continue
            anchors.extend([vertex] * max(1, size // config.contexts_per_sample))
        order = rng.permutation(len(anchors))
        batch = []
        for i in order:
            vertex = anchors[i]
            drawn = pool.draw(vertex, config.contexts_per_sample, rng)
            batch.append(
                OweSample(
                    token_lists=_drawn_tokens(drawn),
                    pooled=_drawn_pooled(model.encoder, drawn),
                    vertex_row=pretrained.vertex_row(vertex),
                )
            )
            if len(batch) == config.batch_size:
                yield batch
                batch = []
        if batch:
            yield batch

    def batch_grads(batch):
        loss, batch_grads_ = owe_loss_and_grads(
            entity, W, b, table, batch, d, unfrozen_encoder=config.unfrozen_encoder
        )
        grads.update(batch_grads_)
        return loss

    def optimizers():
        yield opt_text, "W", W, grads.get("W")
        yield opt_text, "b", b, grads.get("b")
        if table is not None:
            yield opt_text, "table", table, grads.get("table")

    return _run_training(bundle, config, model, make_batches, batch_grads, optimizers, log)


def save_model(
    model: OpenWorldModel, path: str | Path, seed: int, config_hash: bytes = b"\x00" * 32
) -> None:
    """Checkpoint: graph embeddings, projection, encoder. The token
    vocabulary goes to a ``<path>.vocab`` sidecar."""
    if len(config_hash) != 32:
        raise ValueError("config_hash must be 32 bytes (sha256)")
    path = Path(path)
    g = model.graph
    with open(path, "wb") as fh:
        binio.write_magic(fh, MODEL_MAGIC)
        binio.write_u32(fh, MODEL_VERSION)
        binio.write_u32(fh, 0 if model.mode == "single" else 1)
        binio.write_u32(fh, 0 if isinstance(model.encoder, TokenEncoder) else 1)
        binio.write_u32(fh, _encoder_input_dim(model.encoder))
        binio.write_u32(fh, g.dim)
        binio.write_u32(fh, len(g.vertex_ids))
        binio.write_u32(fh, len(g.relation_ids))
        binio.write_u64(fh, seed)
        fh.write(config_hash)
        binio.write_str_block(fh, "\n".join(g.vertex_ids))
        binio.write_str_block(fh, "\n".join(g.relation_ids))
        binio.write_matrix(fh, g.entity)
        binio.write_matrix(fh, g.relation)
        binio.write_matrix(fh, model.projection.weight)
        binio.write_matrix(fh, model.projection.bias.reshape(1, -1))
        if isinstance(model.encoder, TokenEncoder):
            binio.write_u32(fh, len(model.encoder.vocab))
            binio.write_matrix(fh, model.encoder.table)
            save_vocabulary(model.encoder.vocab, str(path) + ".vocab")
        else:
            binio.write_str_block(fh, _export_external_to_text(model.encoder))


def _export_external_to_text(encodings: ExternalEncodings) -> str:
    lines = [f"{len(encodings.vectors)}\t{encodings.dim}"]
    for cid in sorted(encodings.vectors):
        values = " ".join(repr(float(v)) for v in encodings.vectors[cid])
        lines.append(f"{cid}\t{values}")
    return "\n".join(lines)


def load_model(path: str | Path) -> tuple[OpenWorldModel, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        binio.read_magic(fh, MODEL_MAGIC)
        version = binio.read_u32(fh)
        if version != MODEL_VERSION:
            raise binio.FormatError(f"unsupported model version {version}")
        mode = "single" if binio.read_u32(fh) == 0 else "multi"
        encoder_kind = binio.read_u32(fh)
        d_in = binio.read_u32(fh)
        dim = binio.read_u32(fh)
        n_vertices = binio.read_u32(fh)
        n_relations = binio.read_u32(fh)
        seed = binio.read_u64(fh)
        config_hash = fh.read(32)
        vertex_block = binio.read_str_block(fh)
        relation_block = binio.read_str_block(fh)
        graph = ComplexEmbeddings(
            entity=binio.read_matrix(fh, n_vertices, 2 * dim),
            relation=binio.read_matrix(fh, n_relations, 2 * dim),
            dim=dim,
            vertex_ids=tuple(vertex_block.split("\n")) if vertex_block else (),
            relation_ids=tuple(relation_block.split("\n")) if relation_block else (),
        )
        projection = Projection(
            weight=binio.read_matrix(fh, d_in, 2 * dim),
            bias=binio.read_matrix(fh, 1, 2 * dim)[0],
        )
        if encoder_kind == 0:
            vocab_size = binio.read_u32(fh)
            table = binio.read_matrix(fh, vocab_size, d_in)
            vocab = load_vocabulary(str(path) + ".vocab")
            encoder: TokenEncoder | ExternalEncodings = TokenEncoder(table=table, vocab=vocab)
        else:
            text = binio.read_str_block(fh)
            encoder = _import_external_from_text(text)
    model = OpenWorldModel(encoder=encoder, projection=projection, graph=graph, mode=mode)
    return model, {"seed": seed, "config_hash": config_hash}


def _import_external_from_text(text: str) -> ExternalEncodings:
    lines = text.splitlines()
    count, dim = (int(v) for v in lines[0].split("\t"))
    vectors = {}
    for line in lines[1:]:
        if not line:
            continue
        cid, _, rest = line.partition("\t")
        vectors[cid] = np.array([float(v) for v in rest.split()])
    if len(vectors) != count:
        raise binio.FormatError("embedded encoding block row count mismatch")
    return ExternalEncodings(vectors=vectors, dim=dim)
