"""Closed-world link prediction with complex-valued bilinear embeddings.

Entities and relations live in C^d, stored as real matrices of width 2d
(first d columns the real parts, last d the imaginary parts). A triple
(a, r, b) is scored as

    psi(a, r, b) = sum_i Re(a_i * r_i * conj(b_i))

which expands over the real layout to

    aRe*rRe*bRe + aRe*rIm*bIm + aIm*rRe*bIm - aIm*rIm*bRe.

Head prediction reuses the tail machinery through the identity
psi(a, r, b) = psi(b, conj(r), a).

Training minimizes, per triple, softmax cross-entropy over all candidate
tails plus cross-entropy over all candidate heads, with an L2 penalty on
the embedding rows each batch touches, optimized by Adagrad.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .core import HEAD, TAIL, KnowledgeGraph, RelationId, VertexId
from .optim import Adagrad

CHECKPOINT_MAGIC = b"KGLINKE\x00"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ComplexEmbeddings:
    """Embedding matrices plus the id universe they are bound to.

    ``entity`` has shape (|V|, 2d) and ``relation`` (|R|, 2d); row order
    matches ``vertex_ids`` / ``relation_ids``.
    """

    entity: np.ndarray
    relation: np.ndarray
    dim: int
    vertex_ids: tuple[VertexId, ...]
    relation_ids: tuple[RelationId, ...]

    def __post_init__(self):
        if self.entity.shape != (len(self.vertex_ids), 2 * self.dim):
            raise ValueError(
                f"entity matrix {self.entity.shape} does not match "
                f"{len(self.vertex_ids)} vertices at dim {self.dim}"
            )
        if self.relation.shape != (len(self.relation_ids), 2 * self.dim):
            raise ValueError(
                f"relation matrix {self.relation.shape} does not match "
                f"{len(self.relation_ids)} relations at dim {self.dim}"
            )
        if not (np.isfinite(self.entity).all() and np.isfinite(self.relation).all()):
            raise ValueError("embeddings contain non-finite values")

    def __eq__(self, other):
        return (
            isinstance(other, ComplexEmbeddings)
            and self.dim == other.dim
            and self.vertex_ids == other.vertex_ids
            and self.relation_ids == other.relation_ids
            and np.array_equal(self.entity, other.entity)
            and np.array_equal(self.relation, other.relation)
        )

    def vertex_row(self, vertex: VertexId) -> int:
        try:
            return self._vertex_index[vertex]
        except KeyError:
            raise KeyError(f"unknown vertex {vertex!r}") from None

    def relation_row(self, relation: RelationId) -> int:
        try:
            return self._relation_index[relation]
        except KeyError:
            raise KeyError(f"unknown relation {relation!r}") from None

    @property
    def _vertex_index(self) -> dict[VertexId, int]:
        cached = self.__dict__.get("_vertex_index_cache")
        if cached is None:
            cached = {v: i for i, v in enumerate(self.vertex_ids)}
            self.__dict__["_vertex_index_cache"] = cached
        return cached

    @property
    def _relation_index(self) -> dict[RelationId, int]:
        cached = self.__dict__.get("_relation_index_cache")
        if cached is None:
            cached = {r: i for i, r in enumerate(self.relation_ids)}
            self.__dict__["_relation_index_cache"] = cached
        return cached

    def copy(self) -> "ComplexEmbeddings":
        return ComplexEmbeddings(
            entity=self.entity.copy(),
            relation=self.relation.copy(),
            dim=self.dim,
            vertex_ids=self.vertex_ids,
            relation_ids=self.relation_ids,
        )


@dataclass(frozen=True)
class KgcTrainConfig:
    dim: int
    learning_rate: float
    regularizer_weight: float
    batch_size: int
    max_epochs: int
    patience: int | None = None
    min_delta: float = 0.001
    seed: int = 0
    optimizer: str = "adagrad"

    def __post_init__(self):
        if self.dim <= 0 or self.batch_size <= 0 or self.max_epochs < 0:
            raise ValueError("dim and batch_size must be positive, max_epochs >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.regularizer_weight < 0:
            raise ValueError("regularizer_weight must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        if self.optimizer != "adagrad":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


def init_embeddings(
    vertex_ids: tuple[VertexId, ...],
    relation_ids: tuple[RelationId, ...],
    dim: int,
    seed: int,
) -> ComplexEmbeddings:
    """Gaussian(0, 0.1) initialization from a seeded generator."""
    rng = np.random.default_rng(seed)
    return ComplexEmbeddings(
        entity=rng.normal(0.0, 0.1, size=(len(vertex_ids), 2 * dim)),
        relation=rng.normal(0.0, 0.1, size=(len(relation_ids), 2 * dim)),
        dim=dim,
        vertex_ids=tuple(vertex_ids),
        relation_ids=tuple(relation_ids),
    )


def _halves(vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = vec.shape[-1] // 2
    return vec[..., :d], vec[..., d:]


def conj(vec: np.ndarray) -> np.ndarray:
    """Complex conjugate in the stacked real layout (negate the upper half)."""
    re, im = _halves(vec)
    return np.concatenate([re, -im], axis=-1)


def complex_score(a: np.ndarray, r: np.ndarray, b: np.ndarray) -> float:
    """psi(a, r, b) for single vectors of equal even length."""
    if not (a.shape == r.shape == b.shape) or a.shape[-1] % 2:
        raise ValueError(f"incompatible shapes {a.shape}, {r.shape}, {b.shape}")
    a_re, a_im = _halves(a)
    r_re, r_im = _halves(r)
    b_re, b_im = _halves(b)
    return float(
        np.sum(a_re * r_re * b_re + a_re * r_im * b_im + a_im * r_re * b_im - a_im * r_im * b_re)
    )


def _hadamard(a: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Elementwise complex product a * r in the stacked real layout."""
    a_re, a_im = _halves(a)
    r_re, r_im = _halves(r)
    return np.concatenate([a_re * r_re - a_im * r_im, a_re * r_im + a_im * r_re], axis=-1)


def _hadamard_grads(dq: np.ndarray, a: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate through q = a * r (complex Hadamard); returns (da, dr)."""
    dq_re, dq_im = _halves(dq)
    a_re, a_im = _halves(a)
    r_re, r_im = _halves(r)
    da = np.concatenate([dq_re * r_re + dq_im * r_im, -dq_re * r_im + dq_im * r_re], axis=-1)
    dr = np.concatenate([dq_re * a_re + dq_im * a_im, -dq_re * a_im + dq_im * a_re], axis=-1)
    return da, dr


def score_candidates(slot_vec: np.ndarray, rel_vec: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Scores of all candidate rows sitting in the tail slot.

    psi(a, r, b) = Re((a*r) . conj(b)) = qRe.bRe + qIm.bIm with q = a*r,
    so a single matrix product covers every candidate.
    """
    q = _hadamard(slot_vec, rel_vec)
    return q @ candidates.T


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def closed_loss_and_grads(
    entity: np.ndarray,
    relation: np.ndarray,
    heads: np.ndarray,
    rels: np.ndarray,
    tails: np.ndarray,
    regularizer_weight: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch loss and dense gradients for both prediction directions.

    Loss = mean over the batch of (tail cross-entropy + head cross-entropy)
    + regularizer_weight * mean squared norm of the touched rows (the
    batch's unique entity and relation rows).
    """
    n = len(heads)
    e_h = entity[heads]
    e_t = entity[tails]
    rel = relation[rels]

    d_entity = np.zeros_like(entity)
    d_relation = np.zeros_like(relation)
    loss = 0.0

    # tail direction: q = e_h * rel, candidates in the conjugated slot
    for q, anchor_rows, target_rows, rel_arg, conj_rel in (
        (_hadamard(e_h, rel), heads, tails, rel, False),
        (_hadamard(e_t, conj(rel)), tails, heads, conj(rel), True),
    ):
        scores = q @ entity.T
        # cross-entropy via log-sum-exp, stable for extreme scores
        top = scores.max(axis=1)
        lse = np.log(np.exp(scores - top[:, None]).sum(axis=1)) + top
        loss += (lse - scores[np.arange(n), target_rows]).sum() / n
        probs = _softmax(scores)
        d_scores = probs
        d_scores[np.arange(n), target_rows] -= 1.0
        d_scores /= n
        dq = d_scores @ entity
        d_entity += d_scores.T @ q
        da, dr = _hadamard_grads(dq, entity[anchor_rows], rel_arg)
        np.add.at(d_entity, anchor_rows, da)
        if conj_rel:
            dr = conj(dr)
        np.add.at(d_relation, rels, dr)

    if regularizer_weight:
        ent_rows = np.unique(np.concatenate([heads, tails]))
        rel_rows = np.unique(rels)
        n_rows = len(ent_rows) + len(rel_rows)
        loss += regularizer_weight * (
            (entity[ent_rows] ** 2).sum() + (relation[rel_rows] ** 2).sum()
        ) / n_rows
        d_entity[ent_rows] += 2.0 * regularizer_weight / n_rows * entity[ent_rows]
        d_relation[rel_rows] += 2.0 * regularizer_weight / n_rows * relation[rel_rows]

    return float(loss), d_entity, d_relation


def _triples_to_rows(
    emb: ComplexEmbeddings, triples
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    hs, rs, ts = [], [], []
    for h, r, t in triples:
        hs.append(emb.vertex_row(h))
        rs.append(emb.relation_row(r))
        ts.append(emb.vertex_row(t))
    return np.array(hs, dtype=np.intp), np.array(rs, dtype=np.intp), np.array(ts, dtype=np.intp)


def hits_at_k(
    emb: ComplexEmbeddings,
    triples,
    k: int,
    known=None,
) -> float:
    """Filtered hits@k over both directions, micro-averaged per query.

    ``known`` defaults to the scored triples themselves; other true
    answers of the same (anchor, relation) query are masked out before
    reading the target's rank. Ties resolve by vertex id.
    """
    triples = sorted(triples)
    if not triples:
        return 0.0
    known = set(known if known is not None else triples)
    tails_of: dict[tuple[int, int], set[int]] = {}
    heads_of: dict[tuple[int, int], set[int]] = {}
    for h, r, t in known:
        hi, ri, ti = emb.vertex_row(h), emb.relation_row(r), emb.vertex_row(t)
        tails_of.setdefault((hi, ri), set()).add(ti)
        heads_of.setdefault((ti, ri), set()).add(hi)

    hits = 0
    total = 0
    for h, r, t in triples:
        hi, ri, ti = emb.vertex_row(h), emb.relation_row(r), emb.vertex_row(t)
        for anchor, target, truths, rel_vec in (
            (hi, ti, tails_of.get((hi, ri), set()), emb.relation[ri]),
            (ti, hi, heads_of.get((ti, ri), set()), conj(emb.relation[ri])),
        ):
            scores = score_candidates(emb.entity[anchor], rel_vec, emb.entity)
            mask = np.zeros(len(scores), dtype=bool)
            mask[list(truths - {target})] = True
            scores = np.where(mask, -np.inf, scores)
            target_score = scores[target]
            rank = 1 + int((scores > target_score).sum())
            rank += sum(
                1
                for j in np.flatnonzero(scores == target_score)
                if j != target and emb.vertex_ids[j] < emb.vertex_ids[target]
            )
            hits += rank <= k
            total += 1
    return hits / total


def train_closed_world(
    graph: KnowledgeGraph,
    config: KgcTrainConfig,
    vertex_ids: tuple[VertexId, ...] | None = None,
    validation_triples=None,
    log: dict | None = None,
) -> ComplexEmbeddings:
    """Train embeddings on the graph's triples.

    ``vertex_ids`` restricts the candidate set (default: every graph
    vertex). With ``patience`` set, hits@10 on ``validation_triples``
    (falling back to the training triples) is monitored after each epoch
    and the best-scoring snapshot is returned; improvements smaller than
    ``min_delta`` count as none. A caller-supplied ``log`` dict receives
    epoch counts and the monitor history.
    """
    if not graph.triples:
        raise ValueError("graph has no triples to train on")
    vertex_ids = tuple(vertex_ids) if vertex_ids is not None else tuple(sorted(graph.vertices))
    relation_ids = tuple(sorted(graph.relations))
    emb = init_embeddings(vertex_ids, relation_ids, config.dim, config.seed)

    triples = sorted(graph.triples)
    heads, rels, tails = _triples_to_rows(emb, triples)
    monitor_triples = sorted(validation_triples) if validation_triples else triples

    rng = np.random.default_rng([config.seed, 1])
    opt = Adagrad(config.learning_rate)
    best = emb
    best_score = -np.inf
    waited = 0
    if log is None:
        log = {}
    log.update(epochs=0, monitor=[], stopped_early=False)

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(triples))
        for start in range(0, len(triples), config.batch_size):
            idx = order[start : start + config.batch_size]
            # overflow from a diverging run is reported via the loss check
            with np.errstate(all="ignore"):
                loss, d_entity, d_relation = closed_loss_and_grads(
                    emb.entity, emb.relation, heads[idx], rels[idx], tails[idx], config.regularizer_weight
                )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}; "
                    "reduce the learning rate"
                )
            opt.step("entity", emb.entity, d_entity)
            opt.step("relation", emb.relation, d_relation)

        log["epochs"] = epoch + 1
        if config.patience is not None:
            score = hits_at_k(emb, monitor_triples, k=10, known=triples)
            log["monitor"].append(score)
            if score > best_score + config.min_delta:
                best_score = score
                best = emb.copy()
                waited = 0
            else:
                waited += 1
                if waited >= config.patience:
                    log["stopped_early"] = True
                    return best
    return best if config.patience is not None else emb


def predict(
    emb: ComplexEmbeddings, known: VertexId, relation: RelationId, direction: str
) -> list[tuple[VertexId, float]]:
    """Rank every candidate vertex for the open slot of a partial triple.

    ``direction`` names the predicted slot: ``tail`` scores
    psi(known, r, candidate), ``head`` scores psi(candidate, r, known).
    Descending score, ties by vertex id.
    """
    rel_vec = emb.relation[emb.relation_row(relation)]
    if direction == TAIL:
        pass
    elif direction == HEAD:
        rel_vec = conj(rel_vec)
    else:
        raise ValueError(f"direction must be head or tail, got {direction!r}")
    scores = score_candidates(emb.entity[emb.vertex_row(known)], rel_vec, emb.entity)
    order = sorted(zip(emb.vertex_ids, scores), key=lambda p: (-p[1], p[0]))
    return [(v, float(s)) for v, s in order]


def save_embeddings(
    emb: ComplexEmbeddings, path: str | Path, seed: int, config_hash: bytes = b"\x00" * 32
) -> None:
    """Binary checkpoint: header, id blocks, then f32 matrices."""
    if len(config_hash) != 32:
        raise ValueError("config_hash must be 32 bytes (sha256)")
    with open(path, "wb") as fh:
        binio.write_magic(fh, CHECKPOINT_MAGIC)
        binio.write_u32(fh, CHECKPOINT_VERSION)
        binio.write_u32(fh, emb.dim)
        binio.write_u32(fh, len(emb.vertex_ids))
        binio.write_u32(fh, len(emb.relation_ids))
        binio.write_u64(fh, seed)
        fh.write(config_hash)
        binio.write_str_block(fh, "\n".join(emb.vertex_ids))
        binio.write_str_block(fh, "\n".join(emb.relation_ids))
        binio.write_matrix(fh, emb.entity)
        binio.write_matrix(fh, emb.relation)


def load_embeddings(path: str | Path) -> tuple[ComplexEmbeddings, dict]:
    """Returns the embeddings plus header metadata (seed, config hash)."""
    with open(path, "rb") as fh:
        binio.read_magic(fh, CHECKPOINT_MAGIC)
        version = binio.read_u32(fh)
        if version != CHECKPOINT_VERSION:
            raise binio.FormatError(f"unsupported checkpoint version {version}")
        dim = binio.read_u32(fh)
        n_vertices = binio.read_u32(fh)
        n_relations = binio.read_u32(fh)
        seed = binio.read_u64(fh)
        config_hash = fh.read(32)
        vertex_block = binio.read_str_block(fh)
        relation_block = binio.read_str_block(fh)
        vertex_ids = tuple(vertex_block.split("\n")) if vertex_block else ()
        relation_ids = tuple(relation_block.split("\n")) if relation_block else ()
        emb = ComplexEmbeddings(
            entity=binio.read_matrix(fh, n_vertices, 2 * dim),
            relation=binio.read_matrix(fh, n_relations, 2 * dim),
            dim=dim,
            vertex_ids=vertex_ids,
            relation_ids=relation_ids,
        )
    return emb, {"seed": seed, "config_hash": config_hash}


def config_fingerprint(pairs: dict) -> bytes:
    """sha256 over the sorted key=value lines of a config mapping."""
    text = "\n".join(f"{k}={pairs[k]}" for k in sorted(pairs))
    return hashlib.sha256(text.encode("utf-8")).digest()
